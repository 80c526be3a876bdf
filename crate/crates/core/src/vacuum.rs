//! Unruh vacua and excitations in the Rindler basis.
//!
//! Every construction works sector by sector: the spin-σ block of the spin
//! ordering is an independent copy of the spinless problem, and full states are
//! concatenations of sector states.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::algebra::{apply_expr, unruh_creation, LadderExpr, UnruhParams};
use crate::error::{Error, Result};
use crate::fock::{build_mode_table, BasisLabel, Field, FockVector, HalfInt, ModeIndex, ModeTable, Statistics, Wedge};

/// Default bound on the bosonic vacuum weight lost to the occupation cutoff.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

/// State of one spin block, over the table returned by [`ModeTable::sector`].
#[derive(Clone, Debug)]
pub struct SectorState {
    pub sigma: HalfInt,
    pub body: FockVector,
}

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn check_stat(field: Field, statistics: Statistics) -> Result<()> {
    if field.statistics != statistics {
        return Err(Error::SpinStatistics { spin: field.spin.to_string(), statistics: statistics.to_string() });
    }
    Ok(())
}

fn check_fermi_r(r: f64) -> Result<()> {
    crate::algebra::check_r(Statistics::Fermi, r)
}

fn sector_table(field: Field, sigma: HalfInt) -> Result<Arc<ModeTable>> {
    Ok(Arc::new(ModeTable::sector(field, sigma)?))
}

fn bits(s: &str) -> BasisLabel {
    BasisLabel::from_bits(s).expect("static bitstring")
}

/// `cos r|00⟩ + sin r|11⟩` over `(c_{σ,I}, d_{-σ,II})`.
pub fn fermi_right_vacuum(field: Field, sigma: HalfInt, r: f64) -> Result<FockVector> {
    check_stat(field, Statistics::Fermi)?;
    check_fermi_r(r)?;
    field.check_sigma(sigma)?;
    let t = Arc::new(ModeTable::from_modes(field, vec![ModeIndex::c(sigma, Wedge::I), ModeIndex::d(-sigma, Wedge::II)])?);
    FockVector::from_terms(t, None, [(bits("00"), re(r.cos())), (bits("11"), re(r.sin()))])
}

/// `cos r|00⟩ − sin r|11⟩` over `(d_{σ,I}, c_{-σ,II})`.
pub fn fermi_left_vacuum(field: Field, sigma: HalfInt, r: f64) -> Result<FockVector> {
    check_stat(field, Statistics::Fermi)?;
    check_fermi_r(r)?;
    field.check_sigma(sigma)?;
    let t = Arc::new(ModeTable::from_modes(field, vec![ModeIndex::d(sigma, Wedge::I), ModeIndex::c(-sigma, Wedge::II)])?);
    FockVector::from_terms(t, None, [(bits("00"), re(r.cos())), (bits("11"), re(-r.sin()))])
}

pub fn fermi_sector_vacuum(field: Field, sigma: HalfInt, r: f64) -> Result<SectorState> {
    let body = fermi_right_vacuum(field, sigma, r)?.tensor_concat(&fermi_left_vacuum(field, sigma, r)?)?;
    Ok(SectorState { sigma, body: body.with_table(sector_table(field, sigma)?)? })
}

/// `C†_{σ,U}|0⟩_σ = q_R(cos r|1000⟩ − sin r|1011⟩) + q_L(sin r|1101⟩ + cos r|0001⟩)`.
pub fn fermi_sector_one_particle(field: Field, sigma: HalfInt, params: &UnruhParams) -> Result<SectorState> {
    check_stat(field, Statistics::Fermi)?;
    check_stat(field, params.statistics)?;
    field.check_sigma(sigma)?;
    let norm = params.q_r.norm_sqr() + params.q_l.norm_sqr();
    if (norm - 1.0).abs() > crate::algebra::NORMALIZATION_TOL {
        return Err(Error::Normalization(norm));
    }
    let (c, s) = (params.r.cos(), params.r.sin());
    let body = FockVector::from_terms(
        sector_table(field, sigma)?,
        None,
        [
            (bits("1000"), params.q_r * c),
            (bits("1011"), params.q_r * -s),
            (bits("1101"), params.q_l * s),
            (bits("0001"), params.q_l * c),
        ],
    )?;
    Ok(SectorState { sigma, body })
}

/// Concatenates sector states in the order given; the result table is the spin ordering
/// when the sectors come in descending σ.
pub fn concat_sectors(field: Field, sectors: &[SectorState]) -> Result<FockVector> {
    let mut iter = sectors.iter();
    let first = iter.next().ok_or_else(|| Error::InvalidParameter("no sectors".into()))?;
    let mut acc = first.body.clone();
    for s in iter {
        acc = acc.tensor_concat(&s.body)?;
    }
    let full = build_mode_table(field)?;
    if *acc.table().as_ref() == full {
        acc = acc.with_table(Arc::new(full))?;
    }
    Ok(acc)
}

pub fn fermi_full_vacuum(field: Field, r: f64) -> Result<FockVector> {
    check_stat(field, Statistics::Fermi)?;
    let sectors = field
        .sigmas()
        .into_iter()
        .map(|s| fermi_sector_vacuum(field, s, r))
        .collect::<Result<Vec<_>>>()?;
    concat_sectors(field, &sectors)
}

/// One Unruh creation operator of an excitation product.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Excitation {
    pub sigma: HalfInt,
    pub params: UnruhParams,
}

/// A scalar times a product of sector states, one per σ in descending order.
#[derive(Clone, Debug)]
pub struct SectorProduct {
    pub coeff: Complex64,
    pub sectors: Vec<SectorState>,
}

impl SectorProduct {
    pub fn to_vector(&self, field: Field) -> Result<FockVector> {
        Ok(concat_sectors(field, &self.sectors)?.scaled(self.coeff))
    }
}

fn check_excitations(field: Field, r: f64, ops: &[Excitation]) -> Result<()> {
    crate::algebra::check_r(field.statistics, r)?;
    for op in ops {
        field.check_sigma(op.sigma)?;
        check_stat(field, op.params.statistics)?;
        if op.params.r != r {
            return Err(Error::InvalidParameter(format!(
                "excitation at r = {} inside a state at r = {r}",
                op.params.r
            )));
        }
    }
    Ok(())
}

/// Stable sort by descending σ; returns the sorted operators and the sign of the
/// permutation restricted to moves across different σ (fermions only).
fn sort_descending(ops: &[Excitation], fermionic: bool) -> (Vec<Excitation>, f64) {
    let mut sorted: Vec<Excitation> = Vec::with_capacity(ops.len());
    let mut sign = 1.0;
    for op in ops {
        // Insert after every element with σ >= op.sigma; each element jumped over is a
        // transposition of two odd operators.
        let pos = sorted.iter().position(|o| o.sigma < op.sigma).unwrap_or(sorted.len());
        if fermionic && (sorted.len() - pos) % 2 == 1 {
            sign = -sign;
        }
        sorted.insert(pos, *op);
    }
    (sorted, sign)
}

/// Fermionic `C†_{σ_1} … C†_{σ_N}|0⟩_U` by sector substitution.
///
/// Returns `None` when a σ is repeated with identical parameters (the product
/// vanishes by exclusion). Repeated σ with different parameters are applied
/// directly inside that sector.
pub fn fermi_excitation_product(field: Field, r: f64, ops: &[Excitation]) -> Result<Option<SectorProduct>> {
    check_stat(field, Statistics::Fermi)?;
    check_excitations(field, r, ops)?;
    let (sorted, sign) = sort_descending(ops, true);
    let mut sectors = Vec::with_capacity(field.num_sectors());
    for sigma in field.sigmas() {
        let group: Vec<&Excitation> = sorted.iter().filter(|o| o.sigma == sigma).collect();
        for (i, a) in group.iter().enumerate() {
            if group[..i].iter().any(|b| b.params == a.params) {
                return Ok(None);
            }
        }
        let state = match group.as_slice() {
            [] => fermi_sector_vacuum(field, sigma, r)?,
            [one] => fermi_sector_one_particle(field, sigma, &one.params)?,
            many => {
                let mut body = fermi_sector_vacuum(field, sigma, r)?.body;
                for op in many.iter().rev() {
                    body = apply_expr(&unruh_creation(field, sigma, &op.params)?, &body)?;
                }
                SectorState { sigma, body }
            }
        };
        sectors.push(state);
    }
    Ok(Some(SectorProduct { coeff: re(sign), sectors }))
}

/// Full-table vector of [`fermi_excitation_product`]; the vanishing case yields the zero vector.
pub fn fermi_excitation(field: Field, r: f64, ops: &[Excitation]) -> Result<FockVector> {
    match fermi_excitation_product(field, r, ops)? {
        Some(p) => p.to_vector(field),
        None => FockVector::zero(Arc::new(build_mode_table(field)?), None),
    }
}

/// `f(n) = tanh^n r / cosh r` for `n = 0..=n_max`.
pub fn bose_vacuum_coefficients(r: f64, n_max: usize) -> Vec<f64> {
    let t = r.tanh();
    let mut out = Vec::with_capacity(n_max + 1);
    let mut f = 1.0 / r.cosh();
    for _ in 0..=n_max {
        out.push(f);
        f *= t;
    }
    out
}

/// Vacuum weight above occupation `cutoff`: `tanh^{2(cutoff+1)} r`.
pub fn bose_tail_weight(r: f64, cutoff: usize) -> f64 {
    r.tanh().powi(2 * (cutoff as i32 + 1))
}

/// Smallest cutoff whose vacuum tail weight is below `tail_tol`.
pub fn bose_required_cutoff(r: f64, tail_tol: f64) -> usize {
    let t2 = r.tanh().powi(2);
    if t2 == 0.0 || tail_tol >= 1.0 {
        return 0;
    }
    // tail(N) = t2^(N+1) < tol
    let guess = (tail_tol.ln() / t2.ln()).ceil() as i64 - 1;
    let mut n = guess.max(0) as usize;
    while n > 0 && bose_tail_weight(r, n - 1) < tail_tol {
        n -= 1;
    }
    while bose_tail_weight(r, n) >= tail_tol {
        n += 1;
    }
    n
}

fn check_bose_r(r: f64) -> Result<()> {
    crate::algebra::check_r(Statistics::Bose, r)
}

fn check_tail(r: f64, cutoff: usize, tail_tol: Option<f64>) -> Result<()> {
    if let Some(tol) = tail_tol {
        let tail = bose_tail_weight(r, cutoff);
        if tail > tol {
            return Err(Error::CutoffTooSmall { cutoff, required: bose_required_cutoff(r, tol), tail });
        }
    }
    Ok(())
}

/// Two-mode squeezed vacuum `Σ_n f(n)|n n⟩` truncated at `cutoff` and renormalized.
/// The truncation loss records the discarded weight.
pub fn bose_sector_vacuum(field: Field, sigma: HalfInt, r: f64, cutoff: usize, tail_tol: Option<f64>) -> Result<SectorState> {
    check_stat(field, Statistics::Bose)?;
    check_bose_r(r)?;
    if cutoff < 1 {
        return Err(Error::InvalidParameter("cutoff must be at least 1".into()));
    }
    check_tail(r, cutoff, tail_tol)?;
    let f = bose_vacuum_coefficients(r, cutoff);
    let kept: f64 = f.iter().map(|x| x * x).sum();
    let scale = 1.0 / kept.sqrt();
    let terms = f.iter().enumerate().map(|(n, &x)| (BasisLabel::from_slice(&[n as u16, n as u16]), re(x * scale)));
    let body = FockVector::from_terms(sector_table(field, sigma)?, Some(cutoff), terms)?;
    Ok(SectorState { sigma, body: with_loss(body, 1.0 - kept) })
}

fn with_loss(v: FockVector, loss: f64) -> FockVector {
    let cutoff = v.raw_cutoff();
    let amps: BTreeMap<BasisLabel, Complex64> = v.iter().map(|(l, a)| (l.clone(), *a)).collect();
    FockVector::relabeled_raw(v.table().clone(), cutoff, amps, loss.max(0.0))
}

/// Band storage for `g(K, L)` with `|K − L| <= width`, `0 <= K, L <= m`.
struct Band {
    m: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl Band {
    fn new(m: usize, width: usize) -> Self {
        Band { m, width, data: vec![Complex64::default(); (m + 1) * (2 * width + 1)] }
    }

    fn index(&self, k: i64, l: i64) -> Option<usize> {
        let d = l - k + self.width as i64;
        if k < 0 || l < 0 || k > self.m as i64 || l > self.m as i64 || d < 0 || d > 2 * self.width as i64 {
            return None;
        }
        Some(k as usize * (2 * self.width + 1) + d as usize)
    }

    fn get(&self, k: i64, l: i64) -> Complex64 {
        self.index(k, l).map(|i| self.data[i]).unwrap_or_default()
    }

    fn set(&mut self, k: i64, l: i64, v: Complex64) {
        let i = self.index(k, l).expect("band index in range");
        self.data[i] = v;
    }
}

/// Normalized n-particle Unruh excitation `(A†_U)^n / √n! |0⟩` of one bosonic block.
///
/// `n = 1` uses the closed form `Σ f(k)√(k+1)/cosh r (q_L|k,k+1⟩ + q_R|k+1,k⟩)`; larger
/// `n` iterate the coefficient recurrence from exact vacuum coefficients on a grid of
/// `cutoff + n`, so that every kept coefficient is exact before truncation.
pub fn bose_sector_excitation(
    field: Field,
    sigma: HalfInt,
    params: &UnruhParams,
    n: usize,
    cutoff: usize,
    tail_tol: Option<f64>,
) -> Result<SectorState> {
    check_stat(field, Statistics::Bose)?;
    check_stat(field, params.statistics)?;
    field.check_sigma(sigma)?;
    if n == 0 {
        return bose_sector_vacuum(field, sigma, params.r, cutoff, tail_tol);
    }
    if cutoff < n + 1 {
        return Err(Error::CutoffTooSmall { cutoff, required: n + 1, tail: 1.0 });
    }
    check_tail(params.r, cutoff, tail_tol)?;
    let r = params.r;
    let (ch, sh) = (r.cosh(), r.sinh());
    let (qr, ql) = (params.q_r, params.q_l);
    let terms: Vec<(BasisLabel, Complex64)> = if n == 1 {
        let f = bose_vacuum_coefficients(r, cutoff);
        let mut t = Vec::with_capacity(2 * cutoff);
        for k in 0..cutoff {
            let w = f[k] * ((k + 1) as f64).sqrt() / ch;
            t.push((BasisLabel::from_slice(&[k as u16, k as u16 + 1]), ql * w));
            t.push((BasisLabel::from_slice(&[k as u16 + 1, k as u16]), qr * w));
        }
        t
    } else {
        let m = cutoff + n;
        let f = bose_vacuum_coefficients(r, m);
        let mut g = Band::new(m, 0);
        for (k, &x) in f.iter().enumerate() {
            g.set(k as i64, k as i64, re(x));
        }
        for step in 0..n {
            let mut next = Band::new(m, step + 1);
            let norm = 1.0 / ((step + 1) as f64).sqrt();
            for k in 0..=m as i64 {
                for l in (k - step as i64 - 1).max(0)..=(k + step as i64 + 1).min(m as i64) {
                    let sk = (k as f64).sqrt();
                    let sl = (l as f64).sqrt();
                    let right = g.get(k - 1, l) * (ch * sk) - g.get(k, l + 1) * (sh * (l as f64 + 1.0).sqrt());
                    let left = g.get(k, l - 1) * (ch * sl) - g.get(k + 1, l) * (sh * (k as f64 + 1.0).sqrt());
                    next.set(k, l, (qr * right + ql * left) * norm);
                }
            }
            g = next;
        }
        let mut t = Vec::new();
        for k in 0..=cutoff as i64 {
            for l in (k - n as i64).max(0)..=(k + n as i64).min(cutoff as i64) {
                t.push((BasisLabel::from_slice(&[k as u16, l as u16]), g.get(k, l)));
            }
        }
        t
    };
    let raw = FockVector::from_terms(sector_table(field, sigma)?, Some(cutoff), terms)?;
    let kept = raw.norm_sqr();
    if kept == 0.0 {
        return Err(Error::ZeroState);
    }
    let body = raw.scaled(re(1.0 / kept.sqrt()));
    Ok(SectorState { sigma, body: with_loss(body, 1.0 - kept) })
}

/// Bosonic `A†_{σ_1} … A†_{σ_N}|0⟩_U` as a product of normalized sector states.
///
/// A block excited `n` times with one parameter set is the normalized n-particle
/// state; mixed parameters inside a block are applied directly on a vacuum with
/// `cutoff + n` headroom, then truncated and renormalized.
pub fn bose_excitation_product(
    field: Field,
    r: f64,
    ops: &[Excitation],
    cutoff: usize,
    tail_tol: Option<f64>,
) -> Result<SectorProduct> {
    check_stat(field, Statistics::Bose)?;
    check_excitations(field, r, ops)?;
    let mut sectors = Vec::with_capacity(field.num_sectors());
    for sigma in field.sigmas() {
        let group: Vec<&Excitation> = ops.iter().filter(|o| o.sigma == sigma).collect();
        let state = match group.first() {
            None => bose_sector_vacuum(field, sigma, r, cutoff, tail_tol)?,
            Some(first) if group.iter().all(|o| o.params == first.params) => {
                bose_sector_excitation(field, sigma, &first.params, group.len(), cutoff, tail_tol)?
            }
            Some(_) => {
                let wide = cutoff + group.len();
                let mut body = bose_sector_vacuum(field, sigma, r, wide, None)?.body;
                for op in group.iter().rev() {
                    body = apply_expr(&unruh_creation(field, sigma, &op.params)?, &body)?;
                }
                let (cut, _) = body.truncate_to(cutoff)?;
                let kept = cut.norm_sqr();
                if kept == 0.0 {
                    return Err(Error::ZeroState);
                }
                let total = body.norm_sqr();
                let cut = cut.scaled(re(1.0 / kept.sqrt()));
                SectorState { sigma, body: with_loss(cut, 1.0 - kept / total) }
            }
        };
        sectors.push(state);
    }
    Ok(SectorProduct { coeff: re(1.0), sectors })
}

/// Breadth-first closure of `seed` under `Σ A†A`.
fn component_of(
    annihilators: &[LadderExpr],
    table: &Arc<ModeTable>,
    cutoff: Option<usize>,
    seed: BasisLabel,
) -> Result<Vec<BasisLabel>> {
    let adjoints: Vec<LadderExpr> = annihilators.iter().map(LadderExpr::adjoint).collect();
    let mut seen = BTreeSet::from([seed.clone()]);
    let mut queue = VecDeque::from([seed]);
    while let Some(label) = queue.pop_front() {
        let b = FockVector::basis(table.clone(), label, cutoff)?;
        for (a, adj) in annihilators.iter().zip(&adjoints) {
            let back = apply_expr(adj, &apply_expr(a, &b)?)?;
            for (l, _) in back.iter() {
                if seen.insert(l.clone()) {
                    queue.push_back(l.clone());
                }
            }
        }
    }
    Ok(seen.into_iter().collect())
}

/// Eigen-decomposition of `Σ A†A` restricted to `basis`, eigenvalues ascending.
fn component_gram(
    annihilators: &[LadderExpr],
    table: &Arc<ModeTable>,
    cutoff: Option<usize>,
    basis: &[BasisLabel],
) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    let dim = basis.len();
    let mut gram = DMatrix::<Complex64>::zeros(dim, dim);
    for a in annihilators {
        let mut rows: BTreeMap<BasisLabel, Vec<(usize, Complex64)>> = BTreeMap::new();
        for (j, label) in basis.iter().enumerate() {
            let img = apply_expr(a, &FockVector::basis(table.clone(), label.clone(), cutoff)?)?;
            for (l, amp) in img.iter() {
                rows.entry(l.clone()).or_default().push((j, *amp));
            }
        }
        for row in rows.values() {
            for &(i, x) in row {
                for &(j, y) in row {
                    gram[(i, j)] += x.conj() * y;
                }
            }
        }
    }
    let (eigenvalues, eigenvectors) = if gram.iter().all(|z| z.im == 0.0) {
        let eig = gram.map(|z| z.re).symmetric_eigen();
        (eig.eigenvalues, eig.eigenvectors.map(|x| Complex64::new(x, 0.0)))
    } else {
        let eig = gram.symmetric_eigen();
        (eig.eigenvalues, eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigenvalues[a].total_cmp(&eigenvalues[b]));
    let values = order.iter().map(|&i| eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(&order.iter().map(|&i| eigenvectors.column(i).into_owned()).collect::<Vec<_>>());
    Ok((values, vectors))
}

/// Eigenvalue of `Σ A†A` below which a fermionic direction counts as annihilated.
pub const KERNEL_TOL: f64 = 1e-12;

/// Largest fermionic table the oracle enumerates exhaustively.
const MAX_ORACLE_MODES: usize = 20;

/// The unit vector annihilated by every operator in `annihilators`, found as the null
/// space of `Σ A†A`.
///
/// Fermionic tables are enumerated completely and split into the connected
/// components of `Σ A†A`; the kernel summed over all components must be
/// one-dimensional. Bosonic kernels are only approximate under a cutoff: the lowest
/// eigenvector on the component of the Rindler vacuum is accepted when its residual
/// is below `bose_tol`. The global phase makes the Rindler-vacuum amplitude real
/// positive.
pub fn kernel_vacuum_oracle(
    annihilators: &[LadderExpr],
    table: Arc<ModeTable>,
    cutoff: Option<usize>,
    bose_tol: f64,
) -> Result<FockVector> {
    let zero = BasisLabel::zeros(table.len());
    let (basis, vector) = match table.statistics() {
        Statistics::Fermi => {
            let m = table.len();
            if m > MAX_ORACLE_MODES {
                return Err(Error::BlockTooLarge { dim: 1 << m.min(63), limit: 1 << MAX_ORACLE_MODES });
            }
            let mut visited = BTreeSet::new();
            let mut found = Vec::new();
            for k in 0u64..(1u64 << m) {
                let label = BasisLabel((0..m).map(|i| ((k >> (m - 1 - i)) & 1) as u16).collect());
                if visited.contains(&label) {
                    continue;
                }
                let comp = component_of(annihilators, &table, None, label)?;
                visited.extend(comp.iter().cloned());
                let (values, vectors) = component_gram(annihilators, &table, None, &comp)?;
                for (i, v) in values.iter().enumerate() {
                    if *v < KERNEL_TOL {
                        found.push((comp.clone(), vectors.column(i).into_owned()));
                    }
                }
            }
            if found.len() != 1 {
                return Err(Error::KernelDimension { dim: found.len() });
            }
            found.pop().expect("one kernel vector")
        }
        Statistics::Bose => {
            let comp = component_of(annihilators, &table, cutoff, zero.clone())?;
            let (values, vectors) = component_gram(annihilators, &table, cutoff, &comp)?;
            let residual = values[0].max(0.0).sqrt();
            if residual > bose_tol {
                return Err(Error::KernelResidual { residual, tolerance: bose_tol });
            }
            (comp, vectors.column(0).into_owned())
        }
    };
    let anchor = basis
        .iter()
        .position(|l| *l == zero)
        .map(|i| vector[i])
        .filter(|a| a.norm() > 1e-300)
        .unwrap_or_else(|| *vector.iter().max_by(|a, b| a.norm().total_cmp(&b.norm())).expect("non-empty"));
    let phase = anchor.conj() / anchor.norm();
    let terms = basis.iter().enumerate().map(|(i, l)| (l.clone(), vector[i] * phase));
    FockVector::from_terms(table, cutoff, terms)?.normalized()
}

/// All block annihilators of `field` at `r`, for use with [`kernel_vacuum_oracle`] on the full table.
pub fn full_vacuum_annihilators(field: Field, r: f64) -> Result<Vec<LadderExpr>> {
    let mut out = Vec::new();
    for sigma in field.sigmas() {
        out.extend(crate::algebra::block_vacuum_annihilators(field, sigma, r)?);
    }
    Ok(out)
}
