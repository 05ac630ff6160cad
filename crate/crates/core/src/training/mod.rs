//! Labeled datasets, their on-disk format and the training loop.

pub mod format;
mod trainer;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracles::{classify, negativity, Cut, StateClass, StateLabel, NEGATIVITY_TOL};
use crate::states::{
    haar_random_pure, parameterized_mixed, random_circuit_state, random_mixed_product,
    random_product_mixture, random_pure_mixture, random_separable_pure, random_zero_discord,
    reduce_from_larger, DensityMatrix, ParameterizedGenParams, DEFAULT_CIRCUIT_DEPTH,
};

pub use trainer::{train, train_from, EpochStats, Optimizer, TrainConfig, TrainOutcome, TrainReport};

/// Mixed entangled states are kept only above this negativity on some cut,
/// which keeps near-PPT (possibly bound entangled) states out.
pub const MIN_MIXED_NEGATIVITY: f64 = 1e-6;

const PURE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub rho: DensityMatrix,
    pub label: StateLabel,
}

impl Record {
    pub fn is_pure(&self) -> bool {
        (self.rho.purity() - 1.0).abs() <= PURE_TOL
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: String,
    pub seed: u64,
    /// Records contributed by each generator family.
    pub generators: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn states(&self) -> Vec<DensityMatrix> {
        self.records.iter().map(|r| r.rho.clone()).collect()
    }

    pub fn class_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut out: BTreeMap<&'static str, usize> =
            StateClass::ALL.iter().map(|c| (c.name(), 0)).collect();
        for r in &self.records {
            *out.get_mut(r.label.klass.name()).expect("all classes") += 1;
        }
        out
    }

    pub fn filter(&self, subset: Subset) -> Dataset {
        Dataset {
            records: self.records.iter().filter(|r| subset.contains(r)).cloned().collect(),
            meta: DatasetMeta {
                kind: format!("{}[{}]", self.meta.kind, subset.name()),
                ..self.meta.clone()
            },
        }
    }
}

/// Training subsets used in the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subset {
    /// Pure separable states.
    Pure,
    /// Product states, pure or mixed.
    Prod,
    /// States with zero discord on all six checks, products included.
    #[serde(rename = "ZD")]
    Zd,
    /// Every separable state.
    Sep,
    /// Non-product separable states.
    #[serde(rename = "NPS")]
    Nps,
}

impl Subset {
    pub const ALL: [Subset; 5] = [Subset::Pure, Subset::Prod, Subset::Zd, Subset::Sep, Subset::Nps];

    pub fn name(self) -> &'static str {
        match self {
            Subset::Pure => "Pure",
            Subset::Prod => "Prod",
            Subset::Zd => "ZD",
            Subset::Sep => "Sep",
            Subset::Nps => "NPS",
        }
    }

    pub fn contains(self, r: &Record) -> bool {
        let l = &r.label;
        match self {
            Subset::Pure => l.is_separable() && r.is_pure(),
            Subset::Prod => l.is_product,
            Subset::Zd => l.is_separable() && l.is_zero_discord(),
            Subset::Sep => l.is_separable(),
            Subset::Nps => l.is_separable() && !l.is_product,
        }
    }
}

impl std::str::FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subset::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown subset {s:?} (expected Pure, Prod, ZD, Sep or NPS)")))
    }
}

/// Generator families. Each knows whether its output is separable by
/// construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Family {
    SeparablePure,
    ProductCircuit,
    EntangledCircuit,
    HaarPure,
    MixedProduct,
    ZeroDiscord,
    ProductMixture,
    PureMixture,
    Reduced,
    Parameterized,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::SeparablePure => "separable-pure",
            Family::ProductCircuit => "product-circuit",
            Family::EntangledCircuit => "entangled-circuit",
            Family::HaarPure => "haar-pure",
            Family::MixedProduct => "mixed-product",
            Family::ZeroDiscord => "zero-discord",
            Family::ProductMixture => "product-mixture",
            Family::PureMixture => "pure-mixture",
            Family::Reduced => "reduced",
            Family::Parameterized => "parameterized",
        }
    }

    fn separable_by_construction(self) -> bool {
        matches!(
            self,
            Family::SeparablePure
                | Family::ProductCircuit
                | Family::MixedProduct
                | Family::ZeroDiscord
                | Family::ProductMixture
        )
    }

    fn wants_entangled(self) -> bool {
        !self.separable_by_construction()
    }

    fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> DensityMatrix {
        let pure = |s: Result<crate::states::PureState>| {
            s.and_then(|p| p.density()).expect("three-qubit generator")
        };
        match self {
            Family::SeparablePure => pure(Ok(random_separable_pure(rng))),
            Family::ProductCircuit => pure(random_circuit_state(3, DEFAULT_CIRCUIT_DEPTH, false, rng)),
            Family::EntangledCircuit => pure(random_circuit_state(3, DEFAULT_CIRCUIT_DEPTH, true, rng)),
            Family::HaarPure => pure(haar_random_pure(3, rng)),
            Family::MixedProduct => random_mixed_product(rng),
            Family::ZeroDiscord => random_zero_discord(rng),
            Family::ProductMixture => random_product_mixture(rng),
            Family::PureMixture => random_pure_mixture(rng),
            Family::Reduced => {
                let n = if rng.random::<bool>() { 4 } else { 5 };
                reduce_from_larger(n, rng).expect("4 or 5 source qubits")
            }
            Family::Parameterized => {
                parameterized_mixed(&ParameterizedGenParams::sample(rng)).expect("sampled in range")
            }
        }
    }
}

/// Draws one accepted state from `family`: separable families are labeled
/// with separability known, entangled families are redrawn until some cut
/// has negativity above `min_negativity`.
pub fn draw<R: Rng + ?Sized>(family: Family, min_negativity: f64, rng: &mut R) -> DensityMatrix {
    loop {
        let rho = family.sample(rng);
        if !family.wants_entangled() {
            return rho;
        }
        let max_neg = Cut::ALL
            .iter()
            .map(|&c| negativity(&rho, c))
            .fold(0.0, f64::max);
        if max_neg > min_negativity {
            return rho;
        }
    }
}

/// Generates `quota` states per family with one RNG stream, then labels
/// them in parallel and shuffles.
fn assemble(kind: &str, quotas: &[(Family, usize)], seed: u64, stream: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut drawn: Vec<(Family, DensityMatrix)> = Vec::new();
    for &(family, n) in quotas {
        let min_neg = if matches!(family, Family::EntangledCircuit | Family::HaarPure) {
            NEGATIVITY_TOL
        } else {
            MIN_MIXED_NEGATIVITY
        };
        for _ in 0..n {
            drawn.push((family, draw(family, min_neg, &mut rng)));
        }
    }
    drawn.shuffle(&mut rng);
    let records = drawn
        .par_iter()
        .map(|(family, rho)| Record {
            label: classify(rho, family.separable_by_construction().then_some(true)),
            rho: rho.clone(),
        })
        .collect();
    let mut generators = BTreeMap::new();
    for &(family, n) in quotas {
        *generators.entry(family.name().to_string()).or_insert(0) += n;
    }
    Dataset {
        records,
        meta: DatasetMeta {
            kind: kind.to_string(),
            seed,
            generators,
        },
    }
}

/// Splits `n` by `fractions`, rounding each share and giving the remainder
/// to the last one.
fn split(n: usize, fractions: &[f64]) -> Vec<usize> {
    let mut out: Vec<usize> = fractions[..fractions.len() - 1]
        .iter()
        .map(|f| (f * n as f64).round() as usize)
        .collect();
    let used: usize = out.iter().sum();
    out.push(n.saturating_sub(used));
    out
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::invalid(format!("scale must be in (0, 1], got {scale}")));
    }
    Ok(())
}

pub const FULL_TRAIN_SIZE: usize = 530_000;
pub const FULL_VAL_SIZE: usize = 50_000;
pub const FULL_PURE_PER_CLASS: usize = 15_000;
pub const FULL_MIXED_SIZE: usize = 65_000;

/// Separable-only set of `n` states: 36% pure separable (half product
/// vectors, half non-entangling circuits), 23% mixed products, 19% zero
/// discord, 22% mixtures of product states.
pub fn separable_set(kind: &str, n: usize, seed: u64, stream: u64) -> Dataset {
    let s = split(n, &[0.18, 0.18, 0.23, 0.19, 0.22]);
    assemble(
        kind,
        &[
            (Family::SeparablePure, s[0]),
            (Family::ProductCircuit, s[1]),
            (Family::MixedProduct, s[2]),
            (Family::ZeroDiscord, s[3]),
            (Family::ProductMixture, s[4]),
        ],
        seed,
        stream,
    )
}

/// Training and validation sizes at `scale`.
pub fn training_sizes(scale: f64) -> Result<(usize, usize)> {
    check_scale(scale)?;
    Ok((
        (scale * FULL_TRAIN_SIZE as f64).round() as usize,
        (scale * FULL_VAL_SIZE as f64).round() as usize,
    ))
}

pub fn build_training_sets(scale: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (n_train, n_val) = training_sizes(scale)?;
    Ok((
        separable_set("train", n_train, seed, 1),
        separable_set("val", n_val, seed, 2),
    ))
}

/// Balanced pure test set, each class half circuit-generated and half from
/// direct sampling.
pub fn pure_test_set(n_per_class: usize, seed: u64, stream: u64) -> Dataset {
    let sep = split(n_per_class, &[0.5, 0.5]);
    let ent = split(n_per_class, &[0.5, 0.5]);
    assemble(
        "s-pure",
        &[
            (Family::ProductCircuit, sep[0]),
            (Family::SeparablePure, sep[1]),
            (Family::EntangledCircuit, ent[0]),
            (Family::HaarPure, ent[1]),
        ],
        seed,
        stream,
    )
}

/// Mixed test set with all four classes: 10% mixed products, 30% zero
/// discord, 27% mixtures of products, 33% entangled (mixtures of Haar
/// states, reductions of larger Haar states and the parameterized family).
pub fn mixed_test_set(n: usize, seed: u64, stream: u64) -> Dataset {
    let s = split(n, &[0.10, 0.30, 0.27, 0.11, 0.11, 0.11]);
    assemble(
        "s-mixed",
        &[
            (Family::MixedProduct, s[0]),
            (Family::ZeroDiscord, s[1]),
            (Family::ProductMixture, s[2]),
            (Family::PureMixture, s[3]),
            (Family::Reduced, s[4]),
            (Family::Parameterized, s[5]),
        ],
        seed,
        stream,
    )
}

pub fn build_test_sets_sized(n_pure_per_class: usize, n_mixed: usize, seed: u64) -> (Dataset, Dataset) {
    (
        pure_test_set(n_pure_per_class, seed, 3),
        mixed_test_set(n_mixed, seed, 4),
    )
}

pub fn build_test_sets(scale: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    check_scale(scale)?;
    Ok(build_test_sets_sized(
        (scale * FULL_PURE_PER_CLASS as f64).round() as usize,
        (scale * FULL_MIXED_SIZE as f64).round() as usize,
        seed,
    ))
}

/// Dataset kinds the generator command knows about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenKind {
    PureSep,
    PureEnt,
    MixedSep,
    MixedEnt,
    Zd,
    Product,
    SPure,
    SMixed,
    Train,
    Val,
}

impl GenKind {
    pub const ALL: [GenKind; 10] = [
        GenKind::PureSep,
        GenKind::PureEnt,
        GenKind::MixedSep,
        GenKind::MixedEnt,
        GenKind::Zd,
        GenKind::Product,
        GenKind::SPure,
        GenKind::SMixed,
        GenKind::Train,
        GenKind::Val,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GenKind::PureSep => "pure-sep",
            GenKind::PureEnt => "pure-ent",
            GenKind::MixedSep => "mixed-sep",
            GenKind::MixedEnt => "mixed-ent",
            GenKind::Zd => "zd",
            GenKind::Product => "product",
            GenKind::SPure => "s-pure",
            GenKind::SMixed => "s-mixed",
            GenKind::Train => "train",
            GenKind::Val => "val",
        }
    }

    fn stream(self) -> u64 {
        match self {
            GenKind::Train => 1,
            GenKind::Val => 2,
            GenKind::SPure => 3,
            GenKind::SMixed => 4,
            other => 10 + GenKind::ALL.iter().position(|&k| k == other).unwrap_or(0) as u64,
        }
    }
}

impl std::str::FromStr for GenKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GenKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = GenKind::ALL.iter().map(|k| k.name()).collect();
                Error::invalid(format!("unknown dataset kind {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

/// `count` labeled records of `kind`. `s-pure` splits the count evenly
/// between the two classes, so it must be even. Train, val, s-pure and
/// s-mixed use the same random streams as the set builders, so e.g.
/// `generate(Train, n, seed)` equals the training half of
/// `build_training_sets` at the matching scale.
pub fn generate(kind: GenKind, count: usize, seed: u64) -> Result<Dataset> {
    let stream = kind.stream();
    let halves = split(count, &[0.5, 0.5]);
    let thirds = split(count, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    let ds = match kind {
        GenKind::Train | GenKind::Val => separable_set(kind.name(), count, seed, stream),
        GenKind::SPure => {
            if count % 2 != 0 {
                return Err(Error::invalid(format!("s-pure needs an even count, got {count}")));
            }
            pure_test_set(count / 2, seed, stream)
        }
        GenKind::SMixed => mixed_test_set(count, seed, stream),
        GenKind::PureSep => assemble(
            kind.name(),
            &[(Family::SeparablePure, halves[0]), (Family::ProductCircuit, halves[1])],
            seed,
            stream,
        ),
        GenKind::PureEnt => assemble(
            kind.name(),
            &[(Family::EntangledCircuit, halves[0]), (Family::HaarPure, halves[1])],
            seed,
            stream,
        ),
        GenKind::Product => assemble(
            kind.name(),
            &[(Family::SeparablePure, halves[0]), (Family::MixedProduct, halves[1])],
            seed,
            stream,
        ),
        GenKind::Zd => assemble(kind.name(), &[(Family::ZeroDiscord, count)], seed, stream),
        GenKind::MixedSep => assemble(
            kind.name(),
            &[
                (Family::MixedProduct, thirds[0]),
                (Family::ZeroDiscord, thirds[1]),
                (Family::ProductMixture, thirds[2]),
            ],
            seed,
            stream,
        ),
        GenKind::MixedEnt => assemble(
            kind.name(),
            &[
                (Family::PureMixture, thirds[0]),
                (Family::Reduced, thirds[1]),
                (Family::Parameterized, thirds[2]),
            ],
            seed,
            stream,
        ),
    };
    Ok(ds)
}

/// Re-runs the oracles on `rho` and reports whether `label` agrees. For
/// separable labels separability itself cannot be re-derived, so the check
/// asks for zero negativity on every cut instead.
pub fn label_consistent(rho: &DensityMatrix, label: &StateLabel) -> bool {
    if label.is_separable() {
        let fresh = classify(rho, Some(true));
        fresh == *label && Cut::ALL.iter().all(|&c| negativity(rho, c) <= NEGATIVITY_TOL)
    } else {
        classify(rho, None) == *label
    }
}

#[cfg(test)]
mod tests;
