//! Command-line front end: sweeps, state dumps and the invariant suite.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::algebra::{apply_expr, apply_product, block_vacuum_annihilators, unruh_annihilation, unruh_creation, UnruhParams};
use crate::entanglement::{
    negativity_curve, negativity_point, state_negativity, Convergence, CurvePoint, CutoffPolicy, FactorizedState, Limits, Ordering, PointSpec,
};
use crate::error::{Error, Result};
use crate::fock::{build_mode_table, BasisLabel, Field, FockVector, HalfInt, ModeTable, Statistics};
use crate::ordering::{compose, inverse, permutation_for, permutation_variant, relabel_with_signs, OrderingConvention};
use crate::statespec::{elaborate, parse, presets, Coeff};
use crate::vacuum::{
    bose_required_cutoff, bose_sector_vacuum, fermi_excitation, fermi_full_vacuum, full_vacuum_annihilators,
    kernel_vacuum_oracle, Excitation, DEFAULT_TAIL_TOL,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

pub const CSV_HEADER: &str = "r,q_R,ordering,negativity,cutoff_used,converged";

#[derive(Parser, Debug)]
#[command(name = "rindler", version, about = "Unruh-mode states and their negativity for accelerated observers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Negativity over an r grid for one state.
    Sweep(SweepArgs),
    /// Dump a vacuum or excited ket, sector by sector.
    State(StateArgs),
    /// Run the invariant suite.
    Check(CheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FieldKind {
    Fermi,
    Bose,
}

impl From<FieldKind> for Statistics {
    fn from(k: FieldKind) -> Self {
        match k {
            FieldKind::Fermi => Statistics::Fermi,
            FieldKind::Bose => Statistics::Bose,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Jsonl,
    Svg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Spin-1 bosonic helicity state, four q_R values, r in [0, 3].
    Fig2,
    /// Spin-3/2 fermionic state, three orderings, four q_R values, r in [0, π/4].
    Fig3,
}

#[derive(Args, Debug, Default)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, value_enum)]
    pub field: Option<FieldKind>,
    /// Spin as `0`, `1/2`, `1`, `3/2`, ...
    #[arg(long)]
    pub spin: Option<String>,
    #[arg(long, conflicts_with = "state_file")]
    pub state: Option<String>,
    #[arg(long)]
    pub state_file: Option<PathBuf>,
    /// Comma list of spin, canonical, physical.
    #[arg(long)]
    pub ordering: Option<String>,
    /// Physical ordering with each wedge's modes listed in reverse.
    #[arg(long)]
    pub intra_wedge: bool,
    /// Comma list of q_R values; `1/sqrt(2)` is accepted.
    #[arg(long)]
    pub qr: Option<String>,
    #[arg(long)]
    pub r_min: Option<f64>,
    #[arg(long)]
    pub r_max: Option<f64>,
    /// Number of grid points, endpoints included.
    #[arg(long)]
    pub steps: Option<usize>,
    /// `auto` or a fixed bosonic occupation cutoff.
    #[arg(long)]
    pub cutoff: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct StateArgs {
    #[arg(long, value_enum)]
    pub field: FieldKind,
    #[arg(long)]
    pub spin: String,
    #[arg(long, default_value_t = 0.0)]
    pub r: f64,
    #[arg(long, default_value = "1")]
    pub qr: String,
    /// Space-separated σ labels; empty for the Unruh vacuum.
    #[arg(long, default_value = "")]
    pub ket: String,
    #[arg(long)]
    pub cutoff: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct CheckArgs {
    /// Test hook: corrupt one sign in the forward relabeling.
    #[arg(long)]
    pub inject_sign_fault: bool,
    /// Test hook: evaluate the bosonic convergence check at this cutoff.
    #[arg(long)]
    pub force_bose_cutoff: Option<usize>,
}

/// A fully resolved sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub field: Field,
    pub state: String,
    pub orderings: Vec<Ordering>,
    pub q_values: Vec<f64>,
    pub r_min: f64,
    pub r_max: f64,
    pub steps: usize,
    pub cutoff: CutoffPolicy,
    pub out: Option<PathBuf>,
    pub format: Format,
}

impl SweepConfig {
    pub fn fig2() -> Self {
        SweepConfig {
            field: Field::bose(HalfInt::from_twice(2)).expect("spin 1 boson"),
            state: presets::SPIN1.to_string(),
            orderings: vec![Ordering::new(OrderingConvention::Spin)],
            q_values: vec![1.0, 0.9, 0.8, FRAC_1_SQRT_2],
            r_min: 0.0,
            r_max: 3.0,
            steps: 120,
            cutoff: CutoffPolicy::Auto,
            out: None,
            format: Format::Csv,
        }
    }

    pub fn fig3() -> Self {
        SweepConfig {
            field: Field::fermi(HalfInt::from_twice(3)).expect("spin 3/2 fermion"),
            state: presets::SPIN32.to_string(),
            orderings: [OrderingConvention::Physical, OrderingConvention::Canonical, OrderingConvention::Spin]
                .into_iter()
                .map(Ordering::new)
                .collect(),
            q_values: vec![1.0, 0.9, 0.8, FRAC_1_SQRT_2],
            r_min: 0.0,
            r_max: FRAC_PI_4,
            steps: 61,
            cutoff: CutoffPolicy::Auto,
            out: None,
            format: Format::Csv,
        }
    }

    /// Resolves flags on top of a preset. Errors are usage errors.
    pub fn from_args(args: &SweepArgs) -> std::result::Result<Self, String> {
        let base = match args.preset {
            Some(Preset::Fig2) => Some(SweepConfig::fig2()),
            Some(Preset::Fig3) => Some(SweepConfig::fig3()),
            None => None,
        };
        let field = match (args.field, &args.spin) {
            (Some(kind), Some(spin)) => {
                let spin: HalfInt = spin.parse().map_err(|_| format!("bad spin `{spin}`"))?;
                Field::new(kind.into(), spin).map_err(|e| e.to_string())?
            }
            (None, None) => base.as_ref().map(|b| b.field).ok_or("--field and --spin are required without --preset")?,
            _ => return Err("--field and --spin go together".into()),
        };
        let state = match (&args.state, &args.state_file) {
            (Some(s), _) => s.clone(),
            (None, Some(p)) => std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?,
            (None, None) => base.as_ref().map(|b| b.state.clone()).ok_or("--state or --state-file is required")?,
        };
        let mut orderings = match &args.ordering {
            Some(list) => list
                .split(',')
                .map(|s| s.trim().parse::<OrderingConvention>().map(Ordering::new).map_err(|e| e.to_string()))
                .collect::<std::result::Result<Vec<_>, _>>()?,
            None => base.as_ref().map_or_else(|| vec![Ordering::new(OrderingConvention::Spin)], |b| b.orderings.clone()),
        };
        if args.intra_wedge {
            for o in &mut orderings {
                if o.convention != OrderingConvention::Physical {
                    return Err("--intra-wedge applies to the physical ordering only".into());
                }
                o.reverse_within_wedge = true;
            }
        }
        let q_values = match &args.qr {
            Some(list) => list.split(',').map(parse_number).collect::<std::result::Result<Vec<_>, _>>()?,
            None => base.as_ref().map_or_else(|| vec![1.0], |b| b.q_values.clone()),
        };
        if let Some(q) = q_values.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(format!("q_R = {q} is outside [0, 1]"));
        }
        let default_max = match field.statistics {
            Statistics::Fermi => FRAC_PI_4,
            Statistics::Bose => 3.0,
        };
        let r_min = args.r_min.or(base.as_ref().map(|b| b.r_min)).unwrap_or(0.0);
        let r_max = args.r_max.or(base.as_ref().map(|b| b.r_max)).unwrap_or(default_max);
        let steps = args.steps.or(base.as_ref().map(|b| b.steps)).unwrap_or(50);
        if steps < 2 {
            return Err("--steps must be at least 2".into());
        }
        if !(r_min >= 0.0 && r_max > r_min && r_max.is_finite()) {
            return Err(format!("bad r range [{r_min}, {r_max}]"));
        }
        if field.statistics == Statistics::Fermi && r_max > FRAC_PI_4 + 1e-15 {
            return Err(format!("fermionic r_max must not exceed π/4, got {r_max}"));
        }
        let cutoff = match args.cutoff.as_deref() {
            None | Some("auto") => CutoffPolicy::Auto,
            Some(n) => CutoffPolicy::Fixed(n.parse().map_err(|_| format!("bad cutoff `{n}`"))?),
        };
        Ok(SweepConfig { field, state, orderings, q_values, r_min, r_max, steps, cutoff, out: args.out.clone(), format: args.format })
    }

    pub fn r_grid(&self) -> Vec<f64> {
        r_grid(self.r_min, self.r_max, self.steps)
    }
}

/// `steps` evenly spaced points with both endpoints exact.
pub fn r_grid(min: f64, max: f64, steps: usize) -> Vec<f64> {
    let h = (max - min) / (steps - 1) as f64;
    (0..steps).map(|i| if i + 1 == steps { max } else { min + i as f64 * h }).collect()
}

fn parse_number(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    if let Ok(x) = s.parse::<f64>() {
        return Ok(x);
    }
    // Reuse the state grammar's coefficient syntax.
    let field = Field::fermi(HalfInt::ZERO).expect("spin 0 fermion");
    let ast = parse(&format!("{s}|0⟩|⟩"), field).map_err(|_| format!("bad number `{s}`"))?;
    Ok(ast.terms[0].coeff.as_ref().map_or(1.0, Coeff::value))
}

/// Negativity rows for a sweep, r-major then ordering then q_R.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<CurvePoint>> {
    let ast = parse(&cfg.state, cfg.field)?;
    let builder = |p: &PointSpec| -> Result<FactorizedState> { Ok(elaborate(&ast, p.r, p.q_r, p.cutoff)?.state) };
    let conv = Convergence { policy: cfg.cutoff, ..Convergence::default() };
    negativity_curve(&builder, cfg.field, &cfg.orderings, &cfg.q_values, &cfg.r_grid(), &conv)
}

pub fn write_csv(points: &[CurvePoint], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for p in points {
        writeln!(
            out,
            "{:.16e},{:.16e},{},{:.16e},{},{}",
            p.r,
            p.q_r,
            p.ordering,
            p.negativity,
            p.cutoff_used.unwrap_or(0),
            p.converged
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct JsonRow<'a> {
    r: f64,
    #[serde(rename = "q_R")]
    q_r: f64,
    ordering: &'a str,
    negativity: Option<f64>,
    cutoff_used: usize,
    converged: bool,
}

pub fn write_jsonl(points: &[CurvePoint], out: &mut dyn Write) -> std::io::Result<()> {
    for p in points {
        let row = JsonRow {
            r: p.r,
            q_r: p.q_r,
            ordering: &p.ordering,
            negativity: p.negativity.is_finite().then_some(p.negativity),
            cutoff_used: p.cutoff_used.unwrap_or(0),
            converged: p.converged,
        };
        serde_json::to_writer(&mut *out, &row)?;
        writeln!(out)?;
    }
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line plot of negativity against r, one polyline per (ordering, q_R).
pub fn write_svg(points: &[CurvePoint], out: &mut dyn Write) -> std::io::Result<()> {
    let (w, h, m) = (720.0, 440.0, 50.0);
    let finite = || points.iter().filter(|p| p.negativity.is_finite());
    let r_min = points.iter().map(|p| p.r).fold(f64::INFINITY, f64::min);
    let r_max = points.iter().map(|p| p.r).fold(f64::NEG_INFINITY, f64::max);
    let n_max = finite().map(|p| p.negativity).fold(0.0, f64::max).max(1e-12) * 1.05;
    let sx = |r: f64| m + (r - r_min) / (r_max - r_min).max(1e-300) * (w - 2.0 * m);
    let sy = |n: f64| h - m - n / n_max * (h - 2.0 * m);
    let mut series: Vec<(String, u64)> = Vec::new();
    for p in points {
        let key = (p.ordering.clone(), p.q_r.to_bits());
        if !series.contains(&key) {
            series.push(key);
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{y} H{x}" stroke="black" fill="none"/>"#,
        y = h - m,
        x = w - m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">r</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(s, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">negativity</text>"#, h / 2.0, h / 2.0);
    for (x, label) in [(r_min, r_min), (r_max, r_max)] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{label:.3}</text>"#, sx(x), h - m + 15.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#, m - 5.0, sy(n_max), n_max);
    let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">0</text>"#, m - 5.0, sy(0.0));
    for (k, (ordering, q_bits)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        let mut pen_up = true;
        for p in points.iter().filter(|p| &p.ordering == ordering && p.q_r.to_bits() == *q_bits) {
            if !p.negativity.is_finite() {
                pen_up = true;
                continue;
            }
            let _ = write!(d, "{}{:.2} {:.2} ", if pen_up { "M" } else { "L" }, sx(p.r), sy(p.negativity));
            pen_up = false;
        }
        let _ = writeln!(s, r#"<path d="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#, d.trim_end());
        let ly = m + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{color}" text-anchor="end">{ordering} q_R={:.4}</text>"#,
            w - m,
            f64::from_bits(*q_bits)
        );
    }
    s.push_str("</svg>\n");
    out.write_all(s.as_bytes())
}

fn usage_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Parse(_)
            | Error::InvalidParameter(_)
            | Error::InvalidSigma { .. }
            | Error::SpinStatistics { .. }
            | Error::AliceNotQubit(_)
            | Error::Io(_)
    )
}

fn exit_for(e: &Error) -> i32 {
    if usage_error(e) {
        EXIT_USAGE
    } else {
        EXIT_INVARIANT
    }
}

pub fn cmd_sweep(args: &SweepArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let cfg = match SweepConfig::from_args(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let points = match run_sweep(&cfg) {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return exit_for(&e);
        }
    };
    let mut buf = Vec::new();
    let written = match cfg.format {
        Format::Csv => write_csv(&points, &mut buf),
        Format::Jsonl => write_jsonl(&points, &mut buf),
        Format::Svg => write_svg(&points, &mut buf),
    };
    let written = written.and_then(|_| match &cfg.out {
        Some(path) => std::fs::write(path, &buf),
        None => stdout.write_all(&buf),
    });
    if let Err(e) = written {
        let _ = writeln!(stderr, "error: {e}");
        return EXIT_USAGE;
    }
    let failed = points.iter().filter(|p| !p.converged).count();
    if failed > 0 {
        let _ = writeln!(stderr, "warning: {failed} of {} points did not converge", points.len());
        return EXIT_NOT_CONVERGED;
    }
    EXIT_OK
}

fn format_amplitude(a: Complex64) -> String {
    if a.im == 0.0 {
        format!("{:?}", a.re)
    } else {
        format!("{:?}{:+?}i", a.re, a.im)
    }
}

/// Sector-by-sector dump of `C†…|0⟩_U`; vacuum sectors also report the largest
/// residual under their annihilators.
pub fn state_dump(field: Field, r: f64, q_r: f64, ket: &str, cutoff: Option<usize>) -> Result<String> {
    let ast = parse(&format!("|0⟩|{ket}⟩ + |1⟩|⟩"), field)?;
    let ops = &ast.terms[0].rob;
    let cutoff = match field.statistics {
        Statistics::Fermi => None,
        Statistics::Bose => Some(cutoff.unwrap_or_else(|| bose_required_cutoff(r, DEFAULT_TAIL_TOL).max(1))),
    };
    let e = elaborate(&ast, r, q_r, cutoff)?;
    let term = &e.state.branches[0][0];
    let mut s = String::new();
    let mut total = 1.0;
    for sector in &term.sectors {
        let excited = ops.iter().any(|o| o.sigma == sector.sigma);
        let _ = writeln!(s, "# sigma={}", sector.sigma);
        for (label, amp) in sector.body.iter() {
            let _ = writeln!(s, "{} {}", label.render(field.statistics), format_amplitude(*amp));
        }
        let norm = sector.body.norm();
        total *= norm;
        if excited {
            let _ = writeln!(s, "# norm {norm:?}");
        } else {
            let mut residual: f64 = 0.0;
            for a in block_vacuum_annihilators(field, sector.sigma, r)? {
                residual = residual.max(apply_expr(&a, &sector.body)?.norm());
            }
            let _ = writeln!(s, "# norm {norm:?} residual {residual:e}");
        }
        if sector.body.truncation_loss() > 0.0 {
            let _ = writeln!(s, "# truncation loss {:e}", sector.body.truncation_loss());
        }
    }
    let _ = writeln!(s, "# total norm {total:?}");
    Ok(s)
}

pub fn cmd_state(args: &StateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = (|| -> std::result::Result<String, (i32, String)> {
        let spin: HalfInt = args.spin.parse().map_err(|_| (EXIT_USAGE, format!("bad spin `{}`", args.spin)))?;
        let field = Field::new(args.field.into(), spin).map_err(|e| (EXIT_USAGE, e.to_string()))?;
        let q_r = parse_number(&args.qr).map_err(|e| (EXIT_USAGE, e))?;
        state_dump(field, args.r, q_r, &args.ket, args.cutoff).map_err(|e| (exit_for(&e), e.to_string()))
    })();
    match result {
        Ok(text) => {
            let _ = stdout.write_all(text.as_bytes());
            EXIT_OK
        }
        Err((code, msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            code
        }
    }
}

/// One line of the invariant suite.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, value: f64, tol: f64) -> CheckOutcome {
    CheckOutcome { name, passed: value <= tol, detail: format!("{value:.3e} (tol {tol:.0e})") }
}

fn failed(name: &'static str, e: Error) -> CheckOutcome {
    CheckOutcome { name, passed: false, detail: format!("error: {e}") }
}

fn h(twice: i32) -> HalfInt {
    HalfInt::from_twice(twice)
}

fn all_labels(m: usize) -> impl Iterator<Item = BasisLabel> {
    (0u32..1 << m).map(move |k| BasisLabel((0..m).map(|i| ((k >> (m - 1 - i)) & 1) as u16).collect()))
}

fn check_anticommutation() -> Result<f64> {
    let f = Field::fermi(h(1))?;
    let table = Arc::new(build_mode_table(f)?);
    let mut worst: f64 = 0.0;
    for label in all_labels(table.len()) {
        let b = FockVector::basis(table.clone(), label, None)?;
        for (i, mi) in table.modes().iter().enumerate() {
            for (j, mj) in table.modes().iter().enumerate() {
                let mixed = b.apply_creation(mj)?.apply_annihilation(mi)?.add(&b.apply_annihilation(mi)?.apply_creation(mj)?)?;
                let want = if i == j { b.clone() } else { b.scaled(Complex64::default()) };
                worst = worst.max(mixed.max_abs_diff(&want)?);
                let cc = b.apply_creation(mj)?.apply_creation(mi)?.add(&b.apply_creation(mi)?.apply_creation(mj)?)?;
                worst = worst.max(cc.norm());
            }
        }
    }
    Ok(worst)
}

fn check_bose_commutation() -> Result<f64> {
    let f = Field::bose(h(2))?;
    let table = Arc::new(ModeTable::sector(f, h(2))?);
    let cutoff = 4;
    let mut worst: f64 = 0.0;
    for n0 in 0..cutoff as u16 {
        for n1 in 0..cutoff as u16 {
            let b = FockVector::basis(table.clone(), BasisLabel::from_slice(&[n0, n1]), Some(cutoff))?;
            for (i, mi) in table.modes().iter().enumerate() {
                for (j, mj) in table.modes().iter().enumerate() {
                    let ab = b.apply_creation(mj)?.apply_annihilation(mi)?;
                    let ba = b.apply_annihilation(mi)?.apply_creation(mj)?;
                    let comm = ba.axpy(Complex64::new(-1.0, 0.0), &ab)?;
                    let want = if i == j { b.clone() } else { b.scaled(Complex64::default()) };
                    worst = worst.max(comm.max_abs_diff(&want)?);
                }
            }
        }
    }
    Ok(worst)
}

fn check_unruh_anticommutator() -> Result<f64> {
    let f = Field::fermi(h(1))?;
    let table = Arc::new(build_mode_table(f)?);
    let mut worst: f64 = 0.0;
    for (r, q) in [(0.0, 1.0), (0.3, 0.8), (FRAC_PI_4, FRAC_1_SQRT_2)] {
        let p = UnruhParams::new(Statistics::Fermi, r, q)?;
        for sigma in f.sigmas() {
            let c = unruh_creation(f, sigma, &p)?;
            let a = unruh_annihilation(f, sigma, &p)?;
            for label in all_labels(table.len()).step_by(7) {
                let b = FockVector::basis(table.clone(), label, None)?;
                let x = apply_product(&[a.clone(), c.clone()], &b)?.add(&apply_product(&[c.clone(), a.clone()], &b)?)?;
                worst = worst.max(x.max_abs_diff(&b)?);
            }
        }
    }
    Ok(worst)
}

fn check_fermi_oracle() -> Result<f64> {
    let f = Field::fermi(h(1))?;
    let r = 0.4;
    let table = Arc::new(build_mode_table(f)?);
    let oracle = kernel_vacuum_oracle(&full_vacuum_annihilators(f, r)?, table, None, 0.0)?;
    fermi_full_vacuum(f, r)?.max_abs_diff(&oracle)
}

fn check_bose_oracle() -> Result<f64> {
    let f = Field::bose(HalfInt::ZERO)?;
    let (r, cutoff) = (0.3, 25);
    let table = Arc::new(ModeTable::sector(f, HalfInt::ZERO)?);
    let oracle = kernel_vacuum_oracle(&block_vacuum_annihilators(f, HalfInt::ZERO, r)?, table, Some(cutoff), 1e-10)?;
    bose_sector_vacuum(f, HalfInt::ZERO, r, cutoff, None)?.body.max_abs_diff(&oracle)
}

fn check_substitution() -> Result<f64> {
    let f = Field::fermi(h(3))?;
    let mut worst: f64 = 0.0;
    for (r, q) in [(0.2, 0.9), (0.6, FRAC_1_SQRT_2)] {
        let p = UnruhParams::new(Statistics::Fermi, r, q)?;
        let vac = fermi_full_vacuum(f, r)?;
        for sigmas in [[3, 1], [-1, 3], [-3, -1]] {
            let ops: Vec<Excitation> = sigmas.iter().map(|&t| Excitation { sigma: h(t), params: p }).collect();
            let exprs = ops.iter().map(|o| unruh_creation(f, o.sigma, &o.params)).collect::<Result<Vec<_>>>()?;
            worst = worst.max(fermi_excitation(f, r, &ops)?.max_abs_diff(&apply_product(&exprs, &vac)?)?);
        }
    }
    Ok(worst)
}

fn relabel_checked(v: &FockVector, perm: &[usize], fault: bool) -> Result<FockVector> {
    let out = relabel_with_signs(v, perm)?;
    if !fault {
        return Ok(out);
    }
    let terms: Vec<_> = out
        .iter()
        .map(|(l, a)| {
            let flip = l.0.len() > 1 && l.0[0] == 1 && l.0[1] == 1;
            (l.clone(), if flip { -a } else { *a })
        })
        .collect();
    FockVector::from_terms(out.table().clone(), None, terms)
}

fn identical(a: &FockVector, b: &FockVector) -> bool {
    a.len() == b.len() && a.iter().all(|(l, x)| b.amplitude(l) == *x)
}

/// Randomized signed-relabeling properties; returns the number of violations.
pub fn ordering_lemma(samples: usize, seed: u64, fault: bool) -> Result<usize> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut violations = 0;
    for k in 0..samples {
        let f = Field::fermi(h(if k % 2 == 0 { 1 } else { 3 }))?;
        let table = Arc::new(build_mode_table(f)?);
        let m = table.len();
        let terms: Vec<(BasisLabel, Complex64)> = (0..rng.random_range(1..12))
            .map(|_| {
                let label = BasisLabel((0..m).map(|_| rng.random_range(0..2u16)).collect());
                (label, Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            })
            .collect();
        let v = FockVector::from_terms(table.clone(), None, terms)?;
        let mut q: Vec<usize> = (0..m).collect();
        q.shuffle(&mut rng);
        for conv in OrderingConvention::ALL {
            let p = permutation_for(conv, &table)?;
            let w = relabel_checked(&v, &p, fault)?;
            let by_sign = v.iter().all(|(l, x)| {
                let mut moved = BasisLabel::zeros(m);
                for (i, &n) in l.0.iter().enumerate() {
                    moved.0[p[i]] = n;
                }
                w.amplitude(&moved).norm() == x.norm()
            });
            let back = relabel_with_signs(&w, &inverse(&p))?;
            let composed = relabel_with_signs(&w, &q)?;
            let direct = relabel_with_signs(&v, &compose(&q, &p))?;
            if !by_sign || w.len() != v.len() || !identical(&back, &v) || !identical(&composed, &direct) {
                violations += 1;
            }
        }
    }
    Ok(violations)
}

/// `|N(physical) − N(physical, reversed within wedges)|` for the spin-3/2 state.
pub fn physical_variant_gap(r: f64, q_r: f64) -> Result<f64> {
    let f = Field::fermi(h(3))?;
    let e = elaborate(&parse(presets::SPIN32, f)?, r, q_r, None)?;
    let limits = Limits::default();
    let a = state_negativity(&e.state, Ordering::new(OrderingConvention::Physical), &limits)?;
    let b = state_negativity(&e.state, Ordering { convention: OrderingConvention::Physical, reverse_within_wedge: true }, &limits)?;
    let table = build_mode_table(f)?;
    if permutation_variant(OrderingConvention::Physical, &table, true)? == permutation_for(OrderingConvention::Physical, &table)? {
        return Err(Error::InvalidParameter("physical variants coincide".into()));
    }
    Ok((a - b).abs())
}

fn check_grassmann() -> Result<f64> {
    let f = Field::fermi(HalfInt::ZERO)?;
    let ast = parse(presets::SCALAR, f)?;
    let mut worst: f64 = 0.0;
    for r in [0.0, 0.3, 0.6, FRAC_PI_4] {
        let e = elaborate(&ast, r, 1.0, None)?;
        for conv in OrderingConvention::ALL {
            let n = state_negativity(&e.state, Ordering::new(conv), &Limits::default())?;
            worst = worst.max((n - r.cos().powi(2) / 2.0).abs());
        }
    }
    Ok(worst)
}

fn check_bose_convergence(forced: Option<usize>) -> Result<CurvePoint> {
    let f = Field::bose(h(2))?;
    let ast = parse(presets::SPIN1, f)?;
    let builder = |p: &PointSpec| -> Result<FactorizedState> { Ok(elaborate(&ast, p.r, p.q_r, p.cutoff)?.state) };
    let policy = forced.map_or(CutoffPolicy::Auto, CutoffPolicy::Fixed);
    negativity_point(&builder, f, Ordering::new(OrderingConvention::Spin), 1.0, 1.0, &Convergence { policy, ..Convergence::default() })
}

pub fn invariant_suite(args: &CheckArgs) -> Vec<CheckOutcome> {
    let measure = |name: &'static str, tol: f64, f: &dyn Fn() -> Result<f64>| match f() {
        Ok(v) => outcome(name, v, tol),
        Err(e) => failed(name, e),
    };
    let mut out = vec![
        measure("fermionic anticommutation", 0.0, &check_anticommutation),
        measure("bosonic commutation below cutoff", 1e-12, &check_bose_commutation),
        measure("Unruh anticommutator", 1e-12, &check_unruh_anticommutator),
        measure("fermionic vacuum equals annihilator kernel", 1e-10, &check_fermi_oracle),
        measure("bosonic vacuum equals annihilator kernel", 1e-10, &check_bose_oracle),
        measure("sector substitution equals operator application", 1e-12, &check_substitution),
    ];
    out.push(match ordering_lemma(100, 7, args.inject_sign_fault) {
        Ok(v) => CheckOutcome { name: "ordering lemma", passed: v == 0, detail: format!("{v} violations in 100 states") },
        Err(e) => failed("ordering lemma", e),
    });
    out.push(measure("physical ordering variants agree", 1e-10, &|| physical_variant_gap(0.5, 0.8)));
    out.push(measure("Grassmann negativity closed form", 1e-12, &check_grassmann));
    out.push(match check_bose_convergence(args.force_bose_cutoff) {
        Ok(p) => CheckOutcome {
            name: "bosonic cutoff convergence",
            passed: p.converged,
            detail: format!("N = {:.10} at cutoff {}", p.negativity, p.cutoff_used.unwrap_or(0)),
        },
        Err(e) => failed("bosonic cutoff convergence", e),
    });
    out
}

pub fn cmd_check(args: &CheckArgs, stdout: &mut dyn Write) -> i32 {
    let results = invariant_suite(args);
    for r in &results {
        let _ = writeln!(stdout, "{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    if results.iter().all(|r| r.passed) {
        EXIT_OK
    } else {
        EXIT_INVARIANT
    }
}

/// Entry point shared by the binary and the tests.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                return EXIT_USAGE;
            }
            let _ = write!(stdout, "{}", e.render());
            return EXIT_OK;
        }
    };
    match &cli.command {
        Command::Sweep(a) => cmd_sweep(a, stdout, stderr),
        Command::State(a) => cmd_state(a, stdout, stderr),
        Command::Check(a) => cmd_check(a, stdout),
    }
}
