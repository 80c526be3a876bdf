//! Alice–Rob states, the region-II partial trace, partial transposition and negativity.
//!
//! Two routes compute the same matrices. The generic route groups the amplitudes
//! of full Fock vectors by their region-II label. The factorized route keeps each
//! branch as a sum of products of sector states and assembles the partially
//! transposed matrix from per-sector reduced operators; it is the only practical
//! route for bosons at large cutoffs.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{BasisLabel, Field, FockVector, ModeTable, Statistics, Wedge};
use crate::ordering::{permutation_variant, relabel_with_signs, OrderingConvention};
use crate::vacuum::{bose_required_cutoff, SectorProduct, SectorState};

/// Eigenvalues above `-NOISE_FLOOR` do not count towards the negativity.
pub const NOISE_FLOOR: f64 = 1e-12;

/// Tolerance for the Hermiticity, trace and positivity checks on reduced states.
pub const DENSITY_TOL: f64 = 1e-12;

/// Basis ordering used for Rob's kets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ordering {
    pub convention: OrderingConvention,
    /// Physical ordering only: list each wedge's modes in reverse.
    pub reverse_within_wedge: bool,
}

impl Ordering {
    pub fn new(convention: OrderingConvention) -> Self {
        Ordering { convention, reverse_within_wedge: false }
    }

    pub fn label(&self) -> String {
        if self.reverse_within_wedge {
            format!("{}-reversed", self.convention)
        } else {
            self.convention.to_string()
        }
    }
}

impl From<OrderingConvention> for Ordering {
    fn from(c: OrderingConvention) -> Self {
        Ordering::new(c)
    }
}

/// `|0⟩_A|A⟩ + |1⟩_A|B⟩` with Rob's kets in a declared ordering. The branch vectors
/// carry their weights, so `|A|² + |B|² = 1`.
#[derive(Clone, Debug)]
pub struct BipartiteState {
    pub branches: [FockVector; 2],
    pub ordering: Ordering,
}

/// `(|0⟩|A⟩ + |1⟩|B⟩)/√2` from unit-norm spin-ordered kets, relabeled into `ordering`.
pub fn build_bipartite(a: &FockVector, b: &FockVector, ordering: impl Into<Ordering>) -> Result<BipartiteState> {
    for v in [a, b] {
        if (v.norm() - 1.0).abs() > 1e-10 {
            return Err(Error::Normalization(v.norm_sqr()));
        }
    }
    let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
    bipartite_from_branches(a.scaled(h), b.scaled(h), ordering)
}

/// Weighted branches with `|A|² + |B|² = 1`, relabeled from the spin ordering into `ordering`.
pub fn bipartite_from_branches(a: FockVector, b: FockVector, ordering: impl Into<Ordering>) -> Result<BipartiteState> {
    let ordering = ordering.into();
    if a.table() != b.table() && a.table().as_ref() != b.table().as_ref() {
        return Err(Error::TableMismatch);
    }
    let total = a.norm_sqr() + b.norm_sqr();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::Normalization(total));
    }
    let perm = permutation_variant(ordering.convention, a.table(), ordering.reverse_within_wedge)?;
    let a = relabel_with_signs(&a, &perm)?;
    let b = relabel_with_signs(&b, &perm)?.with_table(a.table().clone())?;
    Ok(BipartiteState { branches: [a, b], ordering })
}

/// Sparse Hermitian matrix as sorted, duplicate-free `(row, col, value)` triplets.
#[derive(Clone, Debug, Default)]
pub struct SparseMatrix {
    pub dim: usize,
    pub entries: Vec<(usize, usize, Complex64)>,
}

impl SparseMatrix {
    /// Sums duplicate coordinates and drops exact zeros.
    pub fn from_triplets(dim: usize, mut entries: Vec<(usize, usize, Complex64)>) -> Self {
        entries.sort_unstable_by_key(|e| (e.0, e.1));
        let mut out: Vec<(usize, usize, Complex64)> = Vec::with_capacity(entries.len());
        for (i, j, v) in entries {
            match out.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => out.push((i, j, v)),
            }
        }
        out.retain(|e| e.2 != Complex64::default());
        SparseMatrix { dim, entries: out }
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries
            .binary_search_by_key(&(i, j), |e| (e.0, e.1))
            .map(|k| self.entries[k].2)
            .unwrap_or_default()
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.iter().filter(|e| e.0 == e.1).map(|e| e.2).sum()
    }

    /// Largest `|M_ij − conj(M_ji)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        self.entries.iter().map(|&(i, j, v)| (v - self.get(j, i).conj()).norm()).fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }
}

/// Reduced state of Alice and Rob's region I over the index space `a * rob_dim + m`.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    pub alice_dim: usize,
    pub rob_dim: usize,
    /// Region-I labels behind each Rob index, when the generic route built the matrix.
    pub rob_labels: Option<Vec<BasisLabel>>,
    pub matrix: SparseMatrix,
}

/// Spectral facts collected block by block.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SpectrumSummary {
    pub negative_sum: f64,
    pub min_eigenvalue: f64,
    pub largest_block: usize,
}

impl DensityMatrix {
    /// Checks Hermiticity, unit trace and positivity to [`DENSITY_TOL`].
    pub fn validate(&self, block_limit: usize) -> Result<()> {
        let defect = self.matrix.hermiticity_defect();
        if defect > DENSITY_TOL {
            return Err(Error::NotHermitian(defect));
        }
        let tr = self.matrix.trace();
        if (tr.re - 1.0).abs() > DENSITY_TOL || tr.im.abs() > DENSITY_TOL {
            return Err(Error::Normalization(tr.re));
        }
        let spec = spectrum(self.matrix.dim, &self.matrix.entries, block_limit)?;
        if spec.min_eigenvalue < -DENSITY_TOL {
            return Err(Error::InvalidParameter(format!("density matrix has eigenvalue {:e}", spec.min_eigenvalue)));
        }
        Ok(())
    }
}

/// Positions of region-I and region-II modes in a table.
fn wedge_positions(table: &ModeTable) -> (Vec<usize>, Vec<usize>) {
    let modes = table.modes();
    let i = (0..modes.len()).filter(|&k| modes[k].wedge == Wedge::I).collect();
    let ii = (0..modes.len()).filter(|&k| modes[k].wedge == Wedge::II).collect();
    (i, ii)
}

/// `ρ_{A,I} = Tr_II |Ψ⟩⟨Ψ|`, splitting labels by the wedge of each position of the
/// declared ordering and taking the coefficients as written in that basis.
pub fn trace_region_ii(state: &BipartiteState) -> Result<DensityMatrix> {
    let table = state.branches[0].table().clone();
    let (i_pos, ii_pos) = wedge_positions(&table);
    let mut rob_index: BTreeMap<BasisLabel, usize> = BTreeMap::new();
    for branch in &state.branches {
        for (label, _) in branch.iter() {
            let next = rob_index.len();
            rob_index.entry(label.select(&i_pos)).or_insert(next);
        }
    }
    // Deterministic indices: sorted region-I labels.
    for (k, v) in rob_index.values_mut().enumerate() {
        *v = k;
    }
    let rob_dim = rob_index.len();
    let mut groups: BTreeMap<BasisLabel, Vec<(usize, Complex64)>> = BTreeMap::new();
    for (a, branch) in state.branches.iter().enumerate() {
        for (label, amp) in branch.iter() {
            let row = a * rob_dim + rob_index[&label.select(&i_pos)];
            groups.entry(label.select(&ii_pos)).or_default().push((row, *amp));
        }
    }
    let mut entries = Vec::new();
    for g in groups.values() {
        for &(i, x) in g {
            for &(j, y) in g {
                entries.push((i, j, x * y.conj()));
            }
        }
    }
    Ok(DensityMatrix {
        alice_dim: 2,
        rob_dim,
        rob_labels: Some(rob_index.into_keys().collect()),
        matrix: SparseMatrix::from_triplets(2 * rob_dim, entries),
    })
}

/// Transpose on Alice's qubit: `|a,m⟩⟨a',m'| → |a',m⟩⟨a,m'|`.
pub fn partial_transpose(rho: &DensityMatrix) -> SparseMatrix {
    let d = rho.rob_dim;
    let entries = rho
        .matrix
        .entries
        .iter()
        .map(|&(i, j, v)| {
            let (a, m) = (i / d, i % d);
            let (b, n) = (j / d, j % d);
            (b * d + m, a * d + n, v)
        })
        .collect();
    SparseMatrix::from_triplets(rho.matrix.dim, entries)
}

/// Sum of `|λ|` over eigenvalues of the partial transpose below `-NOISE_FLOOR`.
pub fn negativity(rho: &DensityMatrix, block_limit: usize) -> Result<f64> {
    Ok(pt_spectrum(&partial_transpose(rho), block_limit)?.negative_sum)
}

fn pt_spectrum(pt: &SparseMatrix, block_limit: usize) -> Result<SpectrumSummary> {
    spectrum(pt.dim, &pt.entries, block_limit)
}

/// Matrix entries in arbitrary order; repeated coordinates add up.
#[derive(Clone, Debug, Default)]
pub struct Triplets {
    pub dim: usize,
    pub entries: Vec<(usize, usize, Complex64)>,
}

impl Triplets {
    pub fn into_sparse(self) -> SparseMatrix {
        SparseMatrix::from_triplets(self.dim, self.entries)
    }
}

struct DisjointSets {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets { parent: (0..n as u32).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    /// Merges the sets of `a` and `b`; returns the size of the merged set.
    fn union(&mut self, a: u32, b: u32) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
            self.size[lo as usize] += self.size[hi as usize];
        }
        self.size[ra.min(rb) as usize] as usize
    }
}

const UNSET: u32 = u32::MAX;

/// Eigenvalues of a Hermitian matrix given as unsorted triplets, block by block
/// over connected components. Hermiticity is checked on each dense block.
fn spectrum(dim: usize, entries: &[(usize, usize, Complex64)], block_limit: usize) -> Result<SpectrumSummary> {
    if dim >= UNSET as usize || entries.len() >= UNSET as usize {
        return Err(Error::ProblemTooLarge { size: dim.max(entries.len()), limit: UNSET as usize - 1 });
    }
    let mut sets = DisjointSets::new(dim);
    for &(i, j, _) in entries {
        if i != j {
            sets.union(i as u32, j as u32);
        }
    }
    let mut root = vec![UNSET; dim];
    let mut size = vec![0u32; dim];
    for &(i, j, _) in entries {
        for n in [i, j] {
            if root[n] == UNSET {
                let r = sets.find(n as u32);
                root[n] = r;
                size[r as usize] += 1;
            }
        }
    }
    drop(sets);
    let largest = size.iter().copied().max().unwrap_or(0) as usize;
    if largest > block_limit {
        return Err(Error::BlockTooLarge { dim: largest, limit: block_limit });
    }

    // Counting sort of entry indices by block root.
    let mut start = vec![0u32; dim + 1];
    for &(i, _, _) in entries {
        start[root[i] as usize + 1] += 1;
    }
    for k in 0..dim {
        start[k + 1] += start[k];
    }
    let mut fill = start.clone();
    let mut order = vec![0u32; entries.len()];
    for (k, &(i, _, _)) in entries.iter().enumerate() {
        let r = root[i] as usize;
        order[fill[r] as usize] = k as u32;
        fill[r] += 1;
    }
    drop(fill);

    let mut local = vec![UNSET; dim];
    let mut nodes: Vec<usize> = Vec::new();
    let mut block: Vec<(usize, usize, Complex64)> = Vec::new();
    let mut summary = SpectrumSummary { negative_sum: 0.0, min_eigenvalue: f64::INFINITY, largest_block: largest };
    for r in 0..dim {
        let (lo, hi) = (start[r] as usize, start[r + 1] as usize);
        if lo == hi {
            continue;
        }
        nodes.clear();
        block.clear();
        for &k in &order[lo..hi] {
            let (i, j, v) = entries[k as usize];
            for n in [i, j] {
                if local[n] == UNSET {
                    local[n] = nodes.len() as u32;
                    nodes.push(n);
                }
            }
            block.push((local[i] as usize, local[j] as usize, v));
        }
        for &n in &nodes {
            local[n] = UNSET;
        }
        for l in block_eigenvalues(nodes.len(), &block)? {
            summary.min_eigenvalue = summary.min_eigenvalue.min(l);
            if l < -NOISE_FLOOR {
                summary.negative_sum -= l;
            }
        }
    }
    if summary.min_eigenvalue == f64::INFINITY {
        summary.min_eigenvalue = 0.0;
    }
    Ok(summary)
}

fn block_eigenvalues(n: usize, entries: &[(usize, usize, Complex64)]) -> Result<Vec<f64>> {
    let hermitian = |defect: f64| if defect > DENSITY_TOL { Err(Error::NotHermitian(defect)) } else { Ok(()) };
    match n {
        1 => {
            let x: Complex64 = entries.iter().map(|e| e.2).sum();
            hermitian(x.im.abs())?;
            Ok(vec![x.re])
        }
        2 => {
            let mut m = [[Complex64::default(); 2]; 2];
            for &(i, j, v) in entries {
                m[i][j] += v;
            }
            hermitian((m[0][1] - m[1][0].conj()).norm().max(m[0][0].im.abs()).max(m[1][1].im.abs()))?;
            let (a, d) = (m[0][0].re, m[1][1].re);
            let b = 0.5 * (m[0][1] + m[1][0].conj());
            let mean = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
            Ok(vec![mean - rad, mean + rad])
        }
        _ => {
            let mut m = DMatrix::<Complex64>::zeros(n, n);
            for &(i, j, v) in entries {
                m[(i, j)] += v;
            }
            hermitian((&m - m.adjoint()).iter().map(|x| x.norm()).fold(0.0, f64::max))?;
            if m.iter().all(|x| x.im == 0.0) {
                Ok(m.map(|x| x.re).symmetric_eigenvalues().iter().copied().collect())
            } else {
                Ok(m.symmetric_eigenvalues().iter().copied().collect())
            }
        }
    }
}

/// Full negativity pipeline on a bipartite state via the generic route.
pub fn bipartite_negativity(state: &BipartiteState, block_limit: usize) -> Result<f64> {
    negativity(&trace_region_ii(state)?, block_limit)
}

/// Removes σ-sectors whose coefficients factor out of both kets as one common
/// sector vector. The removed factor is a product state on Rob's side and cannot
/// contribute to the negativity.
///
/// Works on any table: the sector's modes are located by their positions in the
/// table, so reordered bases are handled too.
pub fn prune_spectator_sectors(a: &FockVector, b: &FockVector) -> Result<(Arc<ModeTable>, FockVector, FockVector)> {
    let mut table = a.table().clone();
    let mut a = a.clone();
    let mut b = b.with_table(table.clone())?;
    for sigma in table.field().sigmas() {
        let sector = ModeTable::sector_modes(table.field(), sigma)?;
        let positions: Vec<usize> = sector.iter().filter_map(|m| table.position(m)).collect();
        if positions.len() != sector.len() {
            continue;
        }
        if let Some((na, nb, t)) = factor_out(&a, &b, &positions)? {
            table = t;
            a = na;
            b = nb;
        }
    }
    Ok((table, a, b))
}

type Split = BTreeMap<BasisLabel, Vec<(BasisLabel, Complex64)>>;

fn split(v: &FockVector, positions: &[usize], rest: &[usize]) -> Split {
    let mut out: Split = BTreeMap::new();
    for (label, amp) in v.iter() {
        out.entry(label.select(rest)).or_default().push((label.select(positions), *amp));
    }
    out
}

const FACTOR_TOL: f64 = 1e-12;

fn factor_out(a: &FockVector, b: &FockVector, positions: &[usize]) -> Result<Option<(FockVector, FockVector, Arc<ModeTable>)>> {
    let table = a.table();
    let rest: Vec<usize> = (0..table.len()).filter(|p| !positions.contains(p)).collect();
    let (sa, sb) = (split(a, positions, &rest), split(b, positions, &rest));
    // Reference sector vector: the heaviest group of either ket.
    let reference = sa
        .values()
        .chain(sb.values())
        .max_by(|x, y| group_norm(x).total_cmp(&group_norm(y)))
        .cloned();
    let Some(reference) = reference else { return Ok(None) };
    let rn = group_norm(&reference).sqrt();
    let w: BTreeMap<BasisLabel, Complex64> = reference.into_iter().map(|(l, x)| (l, x / rn)).collect();
    let project = |s: &Split| -> Option<Vec<(BasisLabel, Complex64)>> {
        let mut out = Vec::new();
        for (rest_label, group) in s {
            let overlap: Complex64 = group.iter().map(|(l, x)| w.get(l).copied().unwrap_or_default().conj() * x).sum();
            let mut residual: f64 = w.iter().filter(|(l, _)| !group.iter().any(|(g, _)| g == *l)).map(|(_, x)| (overlap * x).norm_sqr()).sum();
            residual += group.iter().map(|(l, x)| (x - overlap * w.get(l).copied().unwrap_or_default()).norm_sqr()).sum::<f64>();
            if residual.sqrt() > FACTOR_TOL * group_norm(group).sqrt() + 1e-300 {
                return None;
            }
            out.push((rest_label.clone(), overlap));
        }
        Some(out)
    };
    let (Some(ta), Some(tb)) = (project(&sa), project(&sb)) else { return Ok(None) };
    let modes = rest.iter().map(|&p| table.modes()[p]).collect();
    let reduced = Arc::new(ModeTable::from_modes(table.field(), modes)?);
    let na = FockVector::from_terms(reduced.clone(), a.cutoff(), ta)?;
    let nb = FockVector::from_terms(reduced.clone(), b.cutoff(), tb)?;
    Ok(Some((na, nb, reduced)))
}

fn group_norm(g: &[(BasisLabel, Complex64)]) -> f64 {
    g.iter().map(|(_, x)| x.norm_sqr()).sum()
}

/// Alice–Rob state with each branch a sum of sector products in the spin ordering.
/// Coefficients include all weights: `Σ_a ‖branch_a‖² = 1`.
#[derive(Clone, Debug)]
pub struct FactorizedState {
    pub field: Field,
    pub branches: [Vec<SectorProduct>; 2],
}

impl FactorizedState {
    pub fn branch_vector(&self, a: usize) -> Result<FockVector> {
        let mut terms = self.branches[a].iter();
        let first = terms.next().ok_or(Error::ZeroState)?;
        let mut acc = first.to_vector(self.field)?;
        for t in terms {
            acc = t.to_vector(self.field)?.add(&acc)?;
        }
        Ok(acc)
    }

    /// `Σ_a ‖branch_a‖²` from sector overlaps, without building full vectors.
    pub fn norm_sqr(&self) -> Result<f64> {
        let mut total = 0.0;
        for branch in &self.branches {
            for t in branch {
                for s in branch {
                    let mut x = t.coeff.conj() * s.coeff;
                    for (u, v) in t.sectors.iter().zip(&s.sectors) {
                        x *= u.body.inner_product(&v.body)?;
                    }
                    total += x.re;
                }
            }
        }
        Ok(total)
    }

    /// Generic-route bipartite state in `ordering`.
    pub fn to_bipartite(&self, ordering: impl Into<Ordering>) -> Result<BipartiteState> {
        bipartite_from_branches(self.branch_vector(0)?, self.branch_vector(1)?, ordering)
    }

    /// Drops sectors whose state is the same (up to scale) in every term of both branches.
    pub fn prune_spectators(&self) -> FactorizedState {
        let n = self.branches.iter().flatten().map(|t| t.sectors.len()).next().unwrap_or(0);
        let mut state = self.clone();
        for k in (0..n).rev() {
            let Some(reference) = state.branches.iter().flatten().map(|t| &t.sectors[k].body).max_by(|x, y| x.norm_sqr().total_cmp(&y.norm_sqr())).cloned() else {
                continue;
            };
            let Ok(w) = reference.normalized() else { continue };
            let mut overlaps = Vec::new();
            let mut parallel = true;
            for t in state.branches.iter().flatten() {
                let u = &t.sectors[k].body;
                let Ok(o) = w.inner_product(u) else {
                    parallel = false;
                    break;
                };
                let residual = match w.axpy(-o, u) {
                    Ok(diff) => diff.norm(),
                    Err(_) => f64::INFINITY,
                };
                if residual > FACTOR_TOL * u.norm() + 1e-300 {
                    parallel = false;
                    break;
                }
                overlaps.push(o);
            }
            if !parallel {
                continue;
            }
            let mut it = overlaps.into_iter();
            for t in state.branches.iter_mut().flatten() {
                t.coeff *= it.next().expect("one overlap per term");
                t.sectors.remove(k);
            }
        }
        state
    }

    /// Number of Rob indices the factorized route would use.
    pub fn rob_dim(&self) -> Result<usize> {
        let spaces = self.sector_spaces()?;
        Ok(spaces.iter().map(|s| s.dim).product())
    }

    fn sector_spaces(&self) -> Result<Vec<SectorSpace>> {
        let first = self.branches.iter().flatten().next().ok_or(Error::ZeroState)?;
        first.sectors.iter().map(|s| SectorSpace::new(&s.body)).collect()
    }
}

/// Region-I index arithmetic for one sector table.
struct SectorSpace {
    i_pos: Vec<usize>,
    ii_pos: Vec<usize>,
    radix: usize,
    dim: usize,
}

impl SectorSpace {
    fn new(v: &FockVector) -> Result<Self> {
        let (i_pos, ii_pos) = wedge_positions(v.table());
        let radix = match v.statistics() {
            Statistics::Fermi => 2,
            Statistics::Bose => v.cutoff().expect("bosonic vectors carry a cutoff") + 1,
        };
        let dim = radix
            .checked_pow(i_pos.len() as u32)
            .ok_or(Error::ProblemTooLarge { size: usize::MAX, limit: u32::MAX as usize })?;
        Ok(SectorSpace { i_pos, ii_pos, radix, dim })
    }

    fn index(&self, label: &BasisLabel) -> usize {
        self.i_pos.iter().fold(0, |acc, &p| acc * self.radix + label.0[p] as usize)
    }
}

/// `Tr_II |u⟩⟨v|` for one sector, as `(i, j, value)` triplets.
fn sector_reduced(u: &SectorState, v: &SectorState, space: &SectorSpace) -> Vec<(usize, usize, Complex64)> {
    let mut by_ii: BTreeMap<BasisLabel, Vec<(usize, Complex64)>> = BTreeMap::new();
    for (label, amp) in v.body.iter() {
        by_ii.entry(label.select(&space.ii_pos)).or_default().push((space.index(label), amp.conj()));
    }
    let mut out = Vec::new();
    for (label, amp) in u.body.iter() {
        if let Some(group) = by_ii.get(&label.select(&space.ii_pos)) {
            let i = space.index(label);
            for &(j, y) in group {
                out.push((i, j, amp * y));
            }
        }
    }
    SparseMatrix::from_triplets(space.dim, out).entries
}

/// Limits on the factorized route.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Limits {
    /// Largest dense block handed to the eigen-solver.
    pub block_limit: usize,
    /// Largest number of stored matrix entries.
    pub entry_limit: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { block_limit: 800, entry_limit: 40_000_000 }
    }
}

/// Partial transpose of `Tr_II` of a factorized state, assembled from Kronecker
/// products of per-sector reduced operators.
pub fn factorized_partial_transpose(state: &FactorizedState, limits: &Limits) -> Result<Triplets> {
    let spaces = state.sector_spaces()?;
    let d: usize = spaces.iter().map(|s| s.dim).product();
    let dim = d.checked_mul(2).filter(|&n| n < UNSET as usize).ok_or(Error::ProblemTooLarge { size: usize::MAX, limit: UNSET as usize - 1 })?;
    let mut strides = vec![1usize; spaces.len()];
    for k in (0..spaces.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * spaces[k + 1].dim;
    }
    // |a,I⟩⟨b,J| becomes |b,I⟩⟨a,J| under the transpose on Alice.
    let mut jobs = Vec::new();
    let mut total = 0usize;
    for a in 0..2 {
        for b in 0..2 {
            for t in &state.branches[a] {
                for s in &state.branches[b] {
                    let coeff = t.coeff * s.coeff.conj();
                    if coeff == Complex64::default() {
                        continue;
                    }
                    let factors: Vec<_> = (0..spaces.len())
                        .map(|k| sector_reduced(&t.sectors[k], &s.sectors[k], &spaces[k]))
                        .collect();
                    let count = factors.iter().try_fold(1usize, |acc, f| acc.checked_mul(f.len()));
                    total = count.and_then(|c| c.checked_add(total)).unwrap_or(usize::MAX);
                    if total > limits.entry_limit {
                        return Err(Error::ProblemTooLarge { size: total, limit: limits.entry_limit });
                    }
                    jobs.push((factors, b * d, a * d, coeff));
                }
            }
        }
    }
    // Block sizes first, so oversized problems fail before any storage is spent.
    let mut sets = DisjointSets::new(dim);
    for (factors, row, col, coeff) in &jobs {
        let mut largest = 1;
        let finished = kron_visit(factors, &strides, *row, *col, *coeff, &mut |i, j, _| {
            if i != j {
                largest = largest.max(sets.union(i as u32, j as u32));
            }
            largest <= limits.block_limit
        });
        if !finished {
            return Err(Error::BlockTooLarge { dim: largest, limit: limits.block_limit });
        }
    }
    drop(sets);
    let mut entries = Vec::with_capacity(total);
    for (factors, row, col, coeff) in &jobs {
        kron_visit(factors, &strides, *row, *col, *coeff, &mut |i, j, v| {
            entries.push((i, j, v));
            true
        });
    }
    Ok(Triplets { dim, entries })
}

/// Visits the entries of `value · f_1 ⊗ f_2 ⊗ …` at an offset; stops when `visit` returns false.
fn kron_visit<F>(factors: &[Vec<(usize, usize, Complex64)>], strides: &[usize], row: usize, col: usize, value: Complex64, visit: &mut F) -> bool
where
    F: FnMut(usize, usize, Complex64) -> bool,
{
    match factors.split_first() {
        None => visit(row, col, value),
        Some((first, rest)) => first
            .iter()
            .all(|&(i, j, v)| kron_visit(rest, &strides[1..], row + i * strides[0], col + j * strides[0], value * v, visit)),
    }
}

/// Negativity via the factorized route, optionally after dropping spectator sectors.
pub fn factorized_negativity(state: &FactorizedState, prune: bool, limits: &Limits) -> Result<f64> {
    let pruned;
    let state = if prune {
        pruned = state.prune_spectators();
        &pruned
    } else {
        state
    };
    let pt = factorized_partial_transpose(state, limits)?;
    Ok(spectrum(pt.dim, &pt.entries, limits.block_limit)?.negative_sum)
}

/// Negativity of a factorized state in `ordering`. Fermions go through full vectors
/// and the relabeling; bosons use the factorized route with spectator pruning.
pub fn state_negativity(state: &FactorizedState, ordering: Ordering, limits: &Limits) -> Result<f64> {
    match state.field.statistics {
        Statistics::Fermi => bipartite_negativity(&state.to_bipartite(ordering)?, limits.block_limit),
        Statistics::Bose => factorized_negativity(state, true, limits),
    }
}

/// One evaluation request handed to a state builder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointSpec {
    pub r: f64,
    pub q_r: f64,
    /// Occupation cutoff for bosons; ignored for fermions.
    pub cutoff: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CutoffPolicy {
    /// Start from the vacuum tail estimate and escalate until `cutoff + 4` agrees.
    Auto,
    /// Evaluate at this cutoff; still compared against `cutoff + 4` for the flag.
    Fixed(usize),
}

/// Convergence policy for bosonic points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Convergence {
    pub policy: CutoffPolicy,
    /// Accept when the cutoff and cutoff + 4 values differ by less than this.
    pub tolerance: f64,
    /// Vacuum tail weight used for the first automatic cutoff.
    pub start_tail: f64,
    pub max_cutoff: usize,
    pub limits: Limits,
}

impl Default for Convergence {
    fn default() -> Self {
        Convergence {
            policy: CutoffPolicy::Auto,
            tolerance: 1e-8,
            start_tail: 1e-9,
            max_cutoff: 4000,
            limits: Limits::default(),
        }
    }
}

/// Cutoff step between the two evaluations of a convergence check.
pub const CUTOFF_PROBE: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub r: f64,
    pub q_r: f64,
    pub ordering: String,
    /// `NaN` when no evaluation fit within the limits.
    pub negativity: f64,
    pub cutoff_used: Option<usize>,
    pub converged: bool,
}

/// Negativity at one grid point, applying the bosonic cutoff policy.
pub fn negativity_point<B>(builder: &B, field: Field, ordering: Ordering, r: f64, q_r: f64, conv: &Convergence) -> Result<CurvePoint>
where
    B: Fn(&PointSpec) -> Result<FactorizedState> + ?Sized,
{
    let point = |negativity, cutoff_used, converged| CurvePoint {
        r,
        q_r,
        ordering: ordering.label(),
        negativity,
        cutoff_used,
        converged,
    };
    if field.statistics == Statistics::Fermi {
        let state = builder(&PointSpec { r, q_r, cutoff: None })?;
        return Ok(point(state_negativity(&state, ordering, &conv.limits)?, None, true));
    }
    let eval = |cutoff: usize| -> Result<f64> {
        let state = builder(&PointSpec { r, q_r, cutoff: Some(cutoff) })?;
        state_negativity(&state, ordering, &conv.limits)
    };
    let too_big = |e: &Error| matches!(e, Error::BlockTooLarge { .. } | Error::ProblemTooLarge { .. });
    match conv.policy {
        CutoffPolicy::Fixed(n) => {
            let value = eval(n)?;
            let converged = match eval(n + CUTOFF_PROBE) {
                Ok(next) => (next - value).abs() < conv.tolerance,
                Err(e) if too_big(&e) => false,
                Err(e) => return Err(e),
            };
            Ok(point(value, Some(n), converged))
        }
        CutoffPolicy::Auto => {
            let mut n = bose_required_cutoff(r, conv.start_tail).max(CUTOFF_PROBE);
            let mut last: Option<(f64, usize)> = None;
            loop {
                let pair = eval(n).and_then(|lo| Ok((lo, eval(n + CUTOFF_PROBE)?)));
                match pair {
                    Ok((lo, hi)) => {
                        if (hi - lo).abs() < conv.tolerance {
                            return Ok(point(hi, Some(n + CUTOFF_PROBE), true));
                        }
                        last = Some((hi, n + CUTOFF_PROBE));
                    }
                    Err(e) if too_big(&e) => break,
                    Err(e) => return Err(e),
                }
                let next = n + n / 4 + CUTOFF_PROBE;
                if next > conv.max_cutoff {
                    break;
                }
                n = next;
            }
            Ok(match last {
                Some((value, cutoff)) => point(value, Some(cutoff), false),
                None => point(f64::NAN, None, false),
            })
        }
    }
}

/// Worker threads for curve evaluation: `RINDLER_THREADS` if set, else rayon's default.
pub fn thread_count() -> usize {
    std::env::var("RINDLER_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Negativity over a grid; rows come back r-major, then by ordering, then by q_R,
/// independent of the number of worker threads.
pub fn negativity_curve<B>(
    builder: &B,
    field: Field,
    orderings: &[Ordering],
    q_values: &[f64],
    r_values: &[f64],
    conv: &Convergence,
) -> Result<Vec<CurvePoint>>
where
    B: Fn(&PointSpec) -> Result<FactorizedState> + Sync + ?Sized,
{
    let mut jobs = Vec::with_capacity(r_values.len() * orderings.len() * q_values.len());
    for &r in r_values {
        for &o in orderings {
            for &q in q_values {
                jobs.push((r, o, q));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(r, o, q)| negativity_point(builder, field, o, r, q, conv))
            .collect::<Result<Vec<_>>>()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::UnruhParams;
    use crate::fock::{build_mode_table, HalfInt};
    use crate::vacuum::{bose_excitation_product, fermi_excitation_product, fermi_sector_vacuum, Excitation};
    use std::f64::consts::FRAC_PI_4;

    fn h(twice: i32) -> HalfInt {
        HalfInt::from_twice(twice)
    }

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn qubit_state(amps: [[f64; 2]; 2]) -> BipartiteState {
        // Rob is a single fermionic region-I mode: |0⟩, |1⟩.
        let f = Field::fermi(h(0)).unwrap();
        let t = Arc::new(ModeTable::from_modes(f, vec![crate::fock::ModeIndex::c(h(0), Wedge::I)]).unwrap());
        let branch = |row: [f64; 2]| {
            FockVector::from_terms(
                t.clone(),
                None,
                [(BasisLabel::from_slice(&[0]), c(row[0])), (BasisLabel::from_slice(&[1]), c(row[1]))],
            )
            .unwrap()
        };
        BipartiteState { branches: [branch(amps[0]), branch(amps[1])], ordering: Ordering::new(OrderingConvention::Spin) }
    }

    #[test]
    fn textbook_partial_transposes() {
        let bell = qubit_state([[FRAC_1_SQRT_2, 0.0], [0.0, FRAC_1_SQRT_2]]);
        let rho = trace_region_ii(&bell).unwrap();
        rho.validate(100).unwrap();
        let spec = pt_spectrum(&partial_transpose(&rho), 100).unwrap();
        assert!((spec.min_eigenvalue + 0.5).abs() < 1e-15);
        assert!((negativity(&rho, 100).unwrap() - 0.5).abs() < 1e-15);

        let product = qubit_state([[0.6 * 0.8, 0.6 * 0.6], [0.8 * 0.8, 0.8 * 0.6]]);
        let rho = trace_region_ii(&product).unwrap();
        let pt = partial_transpose(&rho);
        let a = pt_spectrum(&rho.matrix, 100).unwrap();
        let b = pt_spectrum(&pt, 100).unwrap();
        assert!(b.min_eigenvalue > -1e-15 && a.min_eigenvalue > -1e-15);
        assert_eq!(negativity(&rho, 100).unwrap(), 0.0);

        let diag = DensityMatrix {
            alice_dim: 2,
            rob_dim: 2,
            rob_labels: None,
            matrix: SparseMatrix::from_triplets(4, vec![(0, 0, c(0.1)), (1, 1, c(0.2)), (2, 2, c(0.3)), (3, 3, c(0.4))]),
        };
        assert_eq!(partial_transpose(&diag).entries, diag.matrix.entries);
    }

    #[test]
    fn rejects_non_hermitian() {
        let rho = DensityMatrix {
            alice_dim: 2,
            rob_dim: 1,
            rob_labels: None,
            matrix: SparseMatrix::from_triplets(2, vec![(0, 0, c(0.5)), (1, 1, c(0.5)), (0, 1, c(0.1))]),
        };
        assert!(matches!(negativity(&rho, 10), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn block_eigenvalues_agree_with_dense_solver() {
        let entries = vec![
            (0, 0, c(0.3)),
            (0, 1, Complex64::new(0.1, 0.2)),
            (1, 0, Complex64::new(0.1, -0.2)),
            (1, 1, c(-0.4)),
        ];
        let mut two = block_eigenvalues(2, &entries).unwrap();
        let m = SparseMatrix::from_triplets(2, entries).to_dense();
        let mut dense: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        two.sort_by(f64::total_cmp);
        dense.sort_by(f64::total_cmp);
        for (x, y) in two.iter().zip(&dense) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    fn grassmann_like_state(r: f64, q: f64) -> FactorizedState {
        let f = Field::fermi(h(1)).unwrap();
        let p = UnruhParams::new(Statistics::Fermi, r, q).unwrap();
        let vac = fermi_excitation_product(f, r, &[]).unwrap().unwrap();
        let one = fermi_excitation_product(f, r, &[Excitation { sigma: h(1), params: p }]).unwrap().unwrap();
        let w = c(FRAC_1_SQRT_2);
        FactorizedState {
            field: f,
            branches: [
                vec![SectorProduct { coeff: vac.coeff * w, sectors: vac.sectors }],
                vec![SectorProduct { coeff: one.coeff * w, sectors: one.sectors }],
            ],
        }
    }

    #[test]
    fn sector_vacuum_reduced_state_is_diagonal() {
        let f = Field::fermi(h(1)).unwrap();
        let r: f64 = 0.37;
        let (co, s) = (r.cos(), r.sin());
        let v = fermi_sector_vacuum(f, h(1), r).unwrap().body;
        let state = BipartiteState { branches: [v.clone(), v.scaled(c(0.0))], ordering: Ordering::new(OrderingConvention::Spin) };
        let rho = trace_region_ii(&state).unwrap();
        // Brute-force label matching over all pairs of sector basis states.
        let table = v.table().clone();
        let (i_pos, ii_pos) = wedge_positions(&table);
        let labels: Vec<BasisLabel> = (0..16u16).map(|k| BasisLabel((0..4).map(|i| (k >> (3 - i)) & 1).collect())).collect();
        let rob = rho.rob_labels.clone().unwrap();
        for x in &labels {
            for y in &labels {
                if x.select(&ii_pos) != y.select(&ii_pos) {
                    continue;
                }
                let val = v.amplitude(x) * v.amplitude(y).conj();
                if val.norm() == 0.0 {
                    continue;
                }
                let i = rob.iter().position(|l| *l == x.select(&i_pos)).unwrap();
                let j = rob.iter().position(|l| *l == y.select(&i_pos)).unwrap();
                assert!((rho.matrix.get(i, j) - val).norm() < 1e-15);
            }
        }
        let diag: Vec<f64> = (0..rob.len()).map(|i| rho.matrix.get(i, i).re).collect();
        let mut want = vec![co.powi(4), s * s * co * co, s * s * co * co, s.powi(4)];
        let mut got = diag.clone();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-15);
        }
        assert!(rho.matrix.entries.iter().all(|e| e.0 == e.1));
    }

    #[test]
    fn grassmann_closed_form() {
        for r in [0.0, 0.2, 0.4, 0.6, FRAC_PI_4] {
            let st = grassmann_like_state(r, 1.0);
            for conv in OrderingConvention::ALL {
                let bip = st.to_bipartite(conv).unwrap();
                let rho = trace_region_ii(&bip).unwrap();
                rho.validate(1000).unwrap();
                let n = negativity(&rho, 1000).unwrap();
                assert!((n - r.cos().powi(2) / 2.0).abs() < 1e-12, "{conv} r={r} n={n}");
            }
        }
    }

    #[test]
    fn factorized_route_matches_generic_in_spin_order() {
        for (r, q) in [(0.0, 1.0), (0.3, 0.9), (0.7, FRAC_1_SQRT_2)] {
            let st = grassmann_like_state(r, q);
            let generic = bipartite_negativity(&st.to_bipartite(OrderingConvention::Spin).unwrap(), 1000).unwrap();
            let fact = factorized_negativity(&st, false, &Limits::default()).unwrap();
            let pruned = factorized_negativity(&st, true, &Limits::default()).unwrap();
            assert!((generic - fact).abs() < 1e-12);
            assert!((generic - pruned).abs() < 1e-12);
        }
    }

    fn spin1_state(r: f64, q: f64, cutoff: usize) -> FactorizedState {
        let f = Field::bose(h(2)).unwrap();
        let p = UnruhParams::new(Statistics::Bose, r, q).unwrap();
        let left = bose_excitation_product(f, r, &[Excitation { sigma: h(-2), params: p }], cutoff, None).unwrap();
        let right = bose_excitation_product(f, r, &[Excitation { sigma: h(2), params: p }], cutoff, None).unwrap();
        let w = c(FRAC_1_SQRT_2);
        FactorizedState {
            field: f,
            branches: [
                vec![SectorProduct { coeff: w, sectors: left.sectors }],
                vec![SectorProduct { coeff: w, sectors: right.sectors }],
            ],
        }
    }

    #[test]
    fn bosonic_routes_agree() {
        for (r, q) in [(0.0, 1.0), (0.2, 0.9), (0.4, 0.8)] {
            let cutoff = 6;
            let st = spin1_state(r, q, cutoff);
            let generic = bipartite_negativity(&st.to_bipartite(OrderingConvention::Spin).unwrap(), 5000).unwrap();
            let fact = factorized_negativity(&st, false, &Limits { block_limit: 5000, ..Limits::default() }).unwrap();
            let pruned = factorized_negativity(&st, true, &Limits::default()).unwrap();
            assert!((generic - fact).abs() < 1e-10, "{generic} {fact}");
            assert!((generic - pruned).abs() < 1e-10);
            let rho = trace_region_ii(&st.to_bipartite(OrderingConvention::Spin).unwrap()).unwrap();
            rho.validate(5000).unwrap();
        }
    }

    #[test]
    fn pruning_vectors() {
        let st = grassmann_like_state(0.4, 0.8);
        let (a, b) = (st.branch_vector(0).unwrap(), st.branch_vector(1).unwrap());
        let (table, pa, pb) = prune_spectator_sectors(&a, &b).unwrap();
        assert_eq!(table.len(), 4);
        let full = bipartite_negativity(&BipartiteState { branches: [a, b], ordering: Ordering::new(OrderingConvention::Spin) }, 100).unwrap();
        let reduced = bipartite_negativity(&BipartiteState { branches: [pa, pb], ordering: Ordering::new(OrderingConvention::Spin) }, 100).unwrap();
        assert!((full - reduced).abs() < 1e-12);

        // Both sectors excited in one branch: nothing to prune.
        let f = Field::fermi(h(1)).unwrap();
        let p = UnruhParams::new(Statistics::Fermi, 0.4, 0.8).unwrap();
        let two = fermi_excitation_product(f, 0.4, &[Excitation { sigma: h(1), params: p }, Excitation { sigma: h(-1), params: p }])
            .unwrap()
            .unwrap()
            .to_vector(f)
            .unwrap();
        let vac = crate::vacuum::fermi_full_vacuum(f, 0.4).unwrap();
        let (table, _, _) = prune_spectator_sectors(&vac, &two).unwrap();
        assert_eq!(table.len(), 8);
        let (table, _, _) = prune_spectator_sectors(&vac, &vac).unwrap();
        assert_eq!(table.len(), 0);
    }

    #[test]
    fn physical_variants_agree() {
        let f = Field::fermi(h(3)).unwrap();
        let r = 0.5;
        let p = UnruhParams::new(Statistics::Fermi, r, 0.8).unwrap();
        let ex = |s: &[i32]| {
            let ops: Vec<Excitation> = s.iter().map(|&t| Excitation { sigma: h(t), params: p }).collect();
            fermi_excitation_product(f, r, &ops).unwrap().unwrap()
        };
        let half = c(0.5);
        let scale = |mut t: SectorProduct| {
            t.coeff *= half;
            t
        };
        let st = FactorizedState {
            field: f,
            branches: [vec![scale(ex(&[3, 1])), scale(ex(&[3]))], vec![scale(ex(&[-3, -1])), scale(ex(&[-3]))]],
        };
        assert!((st.norm_sqr().unwrap() - 1.0).abs() < 1e-12);
        let a = bipartite_negativity(&st.to_bipartite(OrderingConvention::Physical).unwrap(), 1000).unwrap();
        let b = bipartite_negativity(
            &st.to_bipartite(Ordering { convention: OrderingConvention::Physical, reverse_within_wedge: true }).unwrap(),
            1000,
        )
        .unwrap();
        assert!(a > 0.0 && (a - b).abs() < 1e-10);
    }

    #[test]
    fn curve_rows_are_ordered_and_thread_independent() {
        let f = Field::bose(h(2)).unwrap();
        let builder = |p: &PointSpec| Ok(spin1_state(p.r, p.q_r, p.cutoff.unwrap()));
        let orderings = [Ordering::new(OrderingConvention::Spin)];
        let conv = Convergence::default();
        let rows = negativity_curve(&builder, f, &orderings, &[1.0, 0.9], &[0.0, 0.1], &conv).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!((rows[0].r, rows[0].q_r), (0.0, 1.0));
        assert_eq!((rows[1].r, rows[1].q_r), (0.0, 0.9));
        assert_eq!((rows[2].r, rows[2].q_r), (0.1, 1.0));
        assert!(rows.iter().all(|p| p.converged));
        assert!((rows[0].negativity - 0.5).abs() < 1e-12);
        assert!((rows[1].negativity - 0.405).abs() < 1e-12);
        let again = negativity_curve(&builder, f, &orderings, &[1.0, 0.9], &[0.0, 0.1], &conv).unwrap();
        assert_eq!(rows, again);
    }

    #[test]
    fn forced_small_cutoff_is_flagged() {
        let f = Field::bose(h(2)).unwrap();
        let builder = |p: &PointSpec| Ok(spin1_state(p.r, p.q_r, p.cutoff.unwrap()));
        let conv = Convergence { policy: CutoffPolicy::Fixed(2), ..Convergence::default() };
        let p = negativity_point(&builder, f, Ordering::new(OrderingConvention::Spin), 1.0, 1.0, &conv).unwrap();
        assert!(!p.converged);
        assert_eq!(p.cutoff_used, Some(2));
    }

    #[test]
    fn spin_table_is_default() {
        let st = grassmann_like_state(0.3, 1.0);
        let v = st.branch_vector(0).unwrap();
        assert_eq!(v.table().as_ref(), &build_mode_table(st.field).unwrap());
    }
}
