//! Explicit N-atom representation of the collective spin-wave operators.
//!
//! Kets are sparse maps from product configurations (one [`AtomLevel`] per
//! atom) to amplitudes. Operators are sums of single-atom transitions
//! `c_μ |to⟩⟨from|_μ`, which is exactly the sparse-matrix content of the
//! operator in the product basis.

use std::collections::HashMap;

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;

use crate::angular_momentum::{BranchingTable, HalfInt, Helicity};
use crate::error::{Error, Result};

type C = Complex64;

/// Labeled configurations are enumerated one by one up to this count; larger
/// ensembles are averaged over sublevel occupation numbers instead.
pub const EXHAUSTIVE_LIMIT: u64 = 200_000;

/// Atom count up to which explicit construction is supported.
pub const MAX_EXPLICIT_ATOMS: usize = 12;

/// Cold ensemble of `N` atoms prepared unpolarized in level `a`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    f_a: HalfInt,
    f_b: HalfInt,
    positions: Vec<Vector3<f64>>,
    delta_k: Vector3<f64>,
}

impl EnsembleModel {
    /// `delta_k = k_s - k_w` in rad/m; positions in meters.
    pub fn new(
        f_a: HalfInt,
        f_b: HalfInt,
        positions: Vec<Vector3<f64>>,
        delta_k: Vector3<f64>,
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("ensemble needs at least one atom"));
        }
        if f_a.twice() < 0 || f_b.twice() < 0 {
            return Err(Error::invalid("negative angular momentum"));
        }
        if positions
            .iter()
            .chain(std::iter::once(&delta_k))
            .any(|v| !v.iter().all(|x| x.is_finite()))
        {
            return Err(Error::invalid("non-finite position or wave vector"));
        }
        Ok(EnsembleModel {
            f_a,
            f_b,
            positions,
            delta_k,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }

    pub fn f_a(&self) -> HalfInt {
        self.f_a
    }

    pub fn f_b(&self) -> HalfInt {
        self.f_b
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn delta_k(&self) -> &Vector3<f64> {
        &self.delta_k
    }

    /// Population of each `|a, m⟩` in the vacuum state, `1/(2F_a+1)`.
    pub fn vacuum_population(&self) -> f64 {
        1.0 / f64::from(self.f_a.multiplicity())
    }
}

/// Single-atom level in the explicit basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomLevel {
    /// `|a, m⟩`
    Initial(HalfInt),
    /// `|b, m⟩`
    Final(HalfInt),
}

pub type Configuration = Box<[AtomLevel]>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseKet(HashMap<Configuration, C>);

impl SparseKet {
    pub fn basis(config: Configuration) -> Self {
        SparseKet(HashMap::from([(config, C::new(1.0, 0.0))]))
    }

    pub fn amplitude(&self, config: &[AtomLevel]) -> C {
        self.0.get(config).copied().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Configuration, &C)> {
        self.0.iter()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.values().map(|a| a.norm_sqr()).sum()
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &SparseKet) -> C {
        let (small, large, flip) = if self.len() <= other.len() {
            (self, other, false)
        } else {
            (other, self, true)
        };
        small
            .0
            .iter()
            .filter_map(|(k, a)| {
                large
                    .0
                    .get(k)
                    .map(|b| if flip { b.conj() * a } else { a.conj() * b })
            })
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Transition {
    atom: usize,
    from: AtomLevel,
    to: AtomLevel,
    coeff: C,
}

/// A sum of single-atom transition operators on the N-atom product space.
#[derive(Clone, Debug, PartialEq)]
pub struct CollectiveOperator {
    n_atoms: usize,
    terms: Vec<Transition>,
}

impl CollectiveOperator {
    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn adjoint(&self) -> Self {
        CollectiveOperator {
            n_atoms: self.n_atoms,
            terms: self
                .terms
                .iter()
                .map(|t| Transition {
                    atom: t.atom,
                    from: t.to,
                    to: t.from,
                    coeff: t.coeff.conj(),
                })
                .collect(),
        }
    }

    /// Linear combination `Σ_k w_k O_k`. All operands must act on the same
    /// number of atoms.
    pub fn combine<'a>(
        parts: impl IntoIterator<Item = (f64, &'a CollectiveOperator)>,
    ) -> Result<Self> {
        let mut n_atoms = None;
        let mut terms = Vec::new();
        for (w, op) in parts {
            if *n_atoms.get_or_insert(op.n_atoms) != op.n_atoms {
                return Err(Error::invalid("operators act on different atom numbers"));
            }
            terms.extend(op.terms.iter().map(|t| Transition {
                coeff: t.coeff * w,
                ..*t
            }));
        }
        let n_atoms = n_atoms.ok_or_else(|| Error::invalid("empty operator combination"))?;
        Ok(CollectiveOperator { n_atoms, terms })
    }

    pub fn apply(&self, ket: &SparseKet) -> SparseKet {
        let mut out: HashMap<Configuration, C> = HashMap::new();
        for (config, amp) in &ket.0 {
            for t in &self.terms {
                if config[t.atom] == t.from {
                    let mut next = config.clone();
                    next[t.atom] = t.to;
                    *out.entry(next).or_default() += t.coeff * amp;
                }
            }
        }
        SparseKet(out)
    }

    /// `⟨bra| O |ket⟩` for product configurations.
    pub fn matrix_element(&self, bra: &[AtomLevel], ket: &[AtomLevel]) -> C {
        self.terms
            .iter()
            .filter(|t| {
                ket[t.atom] == t.from
                    && bra[t.atom] == t.to
                    && bra
                        .iter()
                        .zip(ket.iter())
                        .enumerate()
                        .all(|(k, (b, c))| k == t.atom || b == c)
            })
            .map(|t| t.coeff)
            .sum()
    }

    /// Dense matrix of the operator restricted to `basis`.
    pub fn to_matrix(&self, basis: &[Configuration]) -> DMatrix<C> {
        let index: HashMap<&[AtomLevel], usize> =
            basis.iter().enumerate().map(|(i, c)| (&c[..], i)).collect();
        let mut m = DMatrix::zeros(basis.len(), basis.len());
        for (col, config) in basis.iter().enumerate() {
            let image = self.apply(&SparseKet::basis(config.clone()));
            for (k, amp) in image.iter() {
                if let Some(&row) = index.get(&k[..]) {
                    m[(row, col)] += amp;
                }
            }
        }
        m
    }
}

/// Product configurations of `n_atoms` atoms over `levels` with at most
/// `max_final` atoms in a level of `b`.
pub fn product_basis(n_atoms: usize, levels: &[AtomLevel], max_final: usize) -> Vec<Configuration> {
    let mut out: Vec<Vec<AtomLevel>> = vec![Vec::with_capacity(n_atoms)];
    for _ in 0..n_atoms {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                levels.iter().filter_map(move |&l| {
                    let excited = prefix
                        .iter()
                        .filter(|x| matches!(x, AtomLevel::Final(_)))
                        .count()
                        + usize::from(matches!(l, AtomLevel::Final(_)));
                    (excited <= max_final).then(|| {
                        let mut p = prefix.clone();
                        p.push(l);
                        p
                    })
                })
            })
            .collect();
    }
    out.into_iter().map(Vec::into_boxed_slice).collect()
}

/// `s†_α(m) = sqrt((2F_a+1)/N) Σ_μ exp(-i Δk·r_μ) |b, m+1+α⟩_μ⟨a, m|`.
pub fn build_collective_operator(
    model: &EnsembleModel,
    alpha: Helicity,
    m: HalfInt,
) -> Result<CollectiveOperator> {
    if model.n_atoms() > MAX_EXPLICIT_ATOMS {
        return Err(Error::invalid(format!(
            "explicit construction limited to {MAX_EXPLICIT_ATOMS} atoms, got {}",
            model.n_atoms()
        )));
    }
    if !model.f_a.admits(m) {
        return Err(Error::invalid(format!(
            "m = {m} is not a sublevel of F_a = {}",
            model.f_a
        )));
    }
    let m_b = m + HalfInt::ONE + alpha.as_half_int();
    if !model.f_b.admits(m_b) {
        return Err(Error::invalid(format!(
            "final projection {m_b} outside F_b = {} (m = {m}, alpha = {})",
            model.f_b,
            alpha.value()
        )));
    }
    let norm = (f64::from(model.f_a.multiplicity()) / model.n_atoms() as f64).sqrt();
    let terms = model
        .positions
        .iter()
        .enumerate()
        .map(|(atom, r)| Transition {
            atom,
            from: AtomLevel::Initial(m),
            to: AtomLevel::Final(m_b),
            coeff: C::from_polar(norm, -model.delta_k.dot(r)),
        })
        .collect();
    Ok(CollectiveOperator {
        n_atoms: model.n_atoms(),
        terms,
    })
}

/// `s†_α = Σ_m X_m(α)/sqrt(Σ_m X_m²(α)) s†_α(m)`.
pub fn normalized_mode_operator(
    model: &EnsembleModel,
    table: &BranchingTable,
    alpha: Helicity,
) -> Result<CollectiveOperator> {
    if table.scheme().f_a() != model.f_a || table.scheme().f_b() != model.f_b {
        return Err(Error::invalid(
            "branching table and ensemble use different levels",
        ));
    }
    let weights = mode_weights(table, alpha)?;
    let parts = weights
        .iter()
        .map(|&(m, w)| build_collective_operator(model, alpha, m).map(|op| (w, op)))
        .collect::<Result<Vec<_>>>()?;
    CollectiveOperator::combine(parts.iter().map(|(w, op)| (*w, op)))
}

/// Nonzero normalized weights `X_m(α)/sqrt(Σ X²)` of a mode.
pub fn mode_weights(table: &BranchingTable, alpha: Helicity) -> Result<Vec<(HalfInt, f64)>> {
    let raw: Vec<(HalfInt, f64)> = table
        .iter()
        .filter(|&(_, a, x)| a == alpha && x != 0.0)
        .map(|(m, _, x)| (m, x))
        .collect();
    let norm = raw.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Numerical(format!(
            "sum of X_m^2 vanishes for alpha = {}",
            alpha.value()
        )));
    }
    Ok(raw.into_iter().map(|(m, x)| (m, x / norm)).collect())
}

/// How the unpolarized vacuum `ρ_a` is averaged over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VacuumAverage {
    /// Every labeled sublevel assignment, weight `(2F_a+1)^-N`.
    Exhaustive,
    /// One representative per occupation vector, multinomial weight. Exact for
    /// the vacuum-diagonal quantities computed here: phases enter only as
    /// `|exp(-iΔk·r_μ)|² = 1` and every atom carries the same coupling, so the
    /// value depends on the assignment only through occupation numbers.
    OccupationClasses,
    /// `Exhaustive` when the labeled count is at most [`EXHAUSTIVE_LIMIT`].
    Auto,
}

/// Weighted vacuum configurations `(p(c), c)` of the ensemble.
pub fn vacuum_configurations(
    model: &EnsembleModel,
    mode: VacuumAverage,
) -> Vec<(f64, Configuration)> {
    let sublevels: Vec<HalfInt> = model.f_a.projections().collect();
    let k = sublevels.len();
    let n = model.n_atoms();
    let labeled = (k as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
    let exhaustive = match mode {
        VacuumAverage::Exhaustive => true,
        VacuumAverage::OccupationClasses => false,
        VacuumAverage::Auto => labeled <= EXHAUSTIVE_LIMIT,
    };
    let p = 1.0 / k as f64;
    if exhaustive {
        let levels: Vec<AtomLevel> = sublevels.iter().map(|&m| AtomLevel::Initial(m)).collect();
        let weight = p.powi(n as i32);
        return product_basis(n, &levels, 0)
            .into_iter()
            .map(|c| (weight, c))
            .collect();
    }
    let mut out = Vec::new();
    let mut counts = vec![0usize; k];
    occupation_vectors(n, 0, &mut counts, &mut |occ| {
        let mut ln_w = ln_factorial(n) + n as f64 * p.ln();
        let mut config = Vec::with_capacity(n);
        for (slot, &c) in occ.iter().enumerate() {
            ln_w -= ln_factorial(c);
            config.extend(std::iter::repeat_n(AtomLevel::Initial(sublevels[slot]), c));
        }
        out.push((ln_w.exp(), config.into_boxed_slice()));
    });
    out
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn occupation_vectors(
    remaining: usize,
    slot: usize,
    counts: &mut [usize],
    visit: &mut impl FnMut(&[usize]),
) {
    if slot + 1 == counts.len() {
        counts[slot] = remaining;
        visit(counts);
        return;
    }
    for c in 0..=remaining {
        counts[slot] = c;
        occupation_vectors(remaining - c, slot + 1, counts, visit);
    }
}

/// `Tr[ρ_a s_x s†_y]` given the creation operators `s†_x` and `s†_y`.
pub fn vacuum_correlation(
    model: &EnsembleModel,
    create_x: &CollectiveOperator,
    create_y: &CollectiveOperator,
    mode: VacuumAverage,
) -> C {
    vacuum_configurations(model, mode)
        .into_iter()
        .map(|(w, c)| {
            let vac = SparseKet::basis(c);
            create_x.apply(&vac).inner(&create_y.apply(&vac)) * w
        })
        .sum()
}

/// Commutator expectation in the heralded one-excitation state
/// `s† ρ_a s / Tr[s† ρ_a s]`, returned with the heralding norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeraldedCommutator {
    /// `Tr[s† ρ_a s]`, the vacuum norm of the mode.
    pub norm: f64,
    /// `⟨[s, s†]⟩` in the heralded state.
    pub commutator: f64,
}

impl HeraldedCommutator {
    /// `|⟨[s, s†]⟩ - 1|`.
    pub fn deviation(&self) -> f64 {
        (self.commutator - 1.0).abs()
    }
}

pub fn heralded_commutator(
    model: &EnsembleModel,
    create: &CollectiveOperator,
    mode: VacuumAverage,
) -> HeraldedCommutator {
    let annihilate = create.adjoint();
    let (mut norm, mut numer) = (0.0, 0.0);
    for (w, c) in vacuum_configurations(model, mode) {
        let one = create.apply(&SparseKet::basis(c));
        // ⟨ψ|s s†|ψ⟩ - ⟨ψ|s† s|ψ⟩ = ‖s†ψ‖² - ‖sψ‖²
        numer += w * (create.apply(&one).norm_sqr() - annihilate.apply(&one).norm_sqr());
        norm += w * one.norm_sqr();
    }
    HeraldedCommutator {
        norm,
        commutator: numer / norm,
    }
}
