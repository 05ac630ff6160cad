//! Ground-truth labels: PPT negativity per bipartition, the block-commutation
//! zero-discord criterion, and the four-way state taxonomy built from them.

use serde::{Deserialize, Serialize};

use crate::linalg::{self, kron, CMatrix};
use crate::states::{DensityMatrix, N_QUBITS};

/// Negativity above which a bipartition counts as entangled.
pub const NEGATIVITY_TOL: f64 = 1e-9;
/// Max-entry distance to the product of marginals below which a state is a
/// product state.
pub const PRODUCT_TOL: f64 = 1e-8;
const COMMUTATOR_REL_TOL: f64 = 1e-8;
const COMMUTATOR_ABS_FLOOR: f64 = 1e-10;

/// One qubit against the other two.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cut {
    /// A|BC
    A,
    /// B|AC
    B,
    /// C|AB
    C,
}

impl Cut {
    pub const ALL: [Cut; 3] = [Cut::A, Cut::B, Cut::C];

    pub fn qubit(self) -> usize {
        self as usize
    }

    pub fn rest(self) -> [usize; 2] {
        match self {
            Cut::A => [1, 2],
            Cut::B => [0, 2],
            Cut::C => [0, 1],
        }
    }
}

/// Which side of a cut is measured by the discord check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    /// The single qubit.
    Small,
    /// The two-qubit remainder.
    Large,
}

impl Side {
    pub const ALL: [Side; 2] = [Side::Small, Side::Large];
}

/// Index of a (cut, side) check in the six-entry discord arrays.
pub fn check_index(cut: Cut, side: Side) -> usize {
    2 * cut.qubit() + side as usize
}

/// Sum of the magnitudes of the negative eigenvalues of the partial transpose
/// over the cut's single qubit.
pub fn negativity(rho: &DensityMatrix, cut: Cut) -> f64 {
    let pt = linalg::partial_transpose(rho.matrix(), &[cut.qubit()], N_QUBITS)
        .expect("three-qubit matrix");
    linalg::hermitian_eigenvalues(&pt)
        .expect("partial transpose of a Hermitian matrix is Hermitian")
        .iter()
        .filter(|&&x| x < 0.0)
        .map(|x| -x)
        .sum()
}

/// Zero-discord test with respect to the measured side of a cut.
///
/// The matrix is written as `Σ |k><q| ⊗ σ_kq` with `k, q` running over the
/// unmeasured subsystem; the state is classical on the measured subsystem iff
/// every block is normal and all blocks commute pairwise.
pub fn zero_discord_check(rho: &DensityMatrix, cut: Cut, side: Side) -> bool {
    let (unmeasured, measured): (Vec<usize>, Vec<usize>) = match side {
        Side::Small => (cut.rest().to_vec(), vec![cut.qubit()]),
        Side::Large => (vec![cut.qubit()], cut.rest().to_vec()),
    };
    let order: Vec<usize> = unmeasured.iter().chain(&measured).copied().collect();
    let sigma = linalg::permute_qubits(rho.matrix(), &order, N_QUBITS).expect("valid order");
    let m = 1 << measured.len();
    let n = 1 << unmeasured.len();
    let eps = (COMMUTATOR_REL_TOL * (1.0 + sigma.max_abs())).max(COMMUTATOR_ABS_FLOOR);

    let blocks: Vec<CMatrix> = (0..n)
        .flat_map(|k| (0..n).map(move |q| (k, q)))
        .map(|(k, q)| CMatrix::from_fn(m, |i, j| sigma[(k * m + i, q * m + j)]))
        .collect();

    for (idx, block) in blocks.iter().enumerate() {
        if block.commutator(&block.adjoint()).max_abs() > eps {
            return false;
        }
        for other in &blocks[idx + 1..] {
            if block.commutator(other).max_abs() > eps {
                return false;
            }
        }
    }
    true
}

/// `‖ρ − ρ_A ⊗ ρ_B ⊗ ρ_C‖_max`
pub fn product_distance(rho: &DensityMatrix) -> f64 {
    let marginals = kron(&kron(&rho.reduced(0), &rho.reduced(1)), &rho.reduced(2));
    rho.matrix().max_abs_diff(&marginals)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StateClass {
    Product,
    NonDiscordant,
    DiscordantSeparable,
    Entangled,
}

impl StateClass {
    pub const ALL: [StateClass; 4] = [
        StateClass::Product,
        StateClass::NonDiscordant,
        StateClass::DiscordantSeparable,
        StateClass::Entangled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StateClass::Product => "product",
            StateClass::NonDiscordant => "non-discordant",
            StateClass::DiscordantSeparable => "discordant-separable",
            StateClass::Entangled => "entangled",
        }
    }

    pub fn is_separable(self) -> bool {
        self != StateClass::Entangled
    }

    /// Product states have zero discord too.
    pub fn is_discordant(self) -> bool {
        matches!(self, StateClass::DiscordantSeparable | StateClass::Entangled)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateLabel {
    /// Per cut A|BC, B|AC, C|AB.
    pub entangled_cut: [bool; 3],
    /// `true` where the (cut, side) zero-discord check fails; see
    /// [`check_index`].
    pub discordant_check: [bool; 6],
    pub is_product: bool,
    pub klass: StateClass,
}

const BIT_PRODUCT: u16 = 1 << 0;
const BIT_SEPARABLE: u16 = 1 << 1;
const BIT_ZERO_DISCORD: u16 = 1 << 2;
const SHIFT_ENTANGLED: u16 = 3;
const SHIFT_DISCORD: u16 = 6;
const USED_BITS: u16 = (1 << 12) - 1;

impl StateLabel {
    pub fn from_flags(entangled_cut: [bool; 3], discordant_check: [bool; 6], is_product: bool) -> Self {
        let klass = if entangled_cut.iter().any(|&e| e) {
            StateClass::Entangled
        } else if is_product {
            StateClass::Product
        } else if discordant_check.iter().all(|&d| !d) {
            StateClass::NonDiscordant
        } else {
            StateClass::DiscordantSeparable
        };
        StateLabel {
            entangled_cut,
            discordant_check,
            is_product,
            klass,
        }
    }

    pub fn is_separable(&self) -> bool {
        self.klass.is_separable()
    }

    pub fn is_zero_discord(&self) -> bool {
        self.discordant_check.iter().all(|&d| !d)
    }

    /// Packs the label into the dataset bitfield: bit 0 product, bit 1
    /// separable, bit 2 zero discord on all six checks, bits 3-5 entangled
    /// cuts, bits 6-11 failed discord checks.
    pub fn to_bits(&self) -> u16 {
        let mut bits = 0;
        if self.is_product {
            bits |= BIT_PRODUCT;
        }
        if self.is_separable() {
            bits |= BIT_SEPARABLE;
        }
        if self.is_zero_discord() {
            bits |= BIT_ZERO_DISCORD;
        }
        for (i, &e) in self.entangled_cut.iter().enumerate() {
            if e {
                bits |= 1 << (SHIFT_ENTANGLED + i as u16);
            }
        }
        for (i, &d) in self.discordant_check.iter().enumerate() {
            if d {
                bits |= 1 << (SHIFT_DISCORD + i as u16);
            }
        }
        bits
    }

    /// Inverse of [`to_bits`](Self::to_bits). Returns `None` when unused bits
    /// are set or the summary bits disagree with the per-cut/per-check flags.
    pub fn from_bits(bits: u16) -> Option<Self> {
        if bits & !USED_BITS != 0 {
            return None;
        }
        let entangled_cut = [0, 1, 2].map(|i| bits & (1 << (SHIFT_ENTANGLED + i)) != 0);
        let discordant_check = [0, 1, 2, 3, 4, 5].map(|i| bits & (1 << (SHIFT_DISCORD + i)) != 0);
        let label = Self::from_flags(entangled_cut, discordant_check, bits & BIT_PRODUCT != 0);
        (label.to_bits() == bits).then_some(label)
    }
}

/// Runs every oracle on `rho`. When `known_separable` is `Some(true)` the
/// state is separable by construction and the entanglement flags are forced
/// off whatever the numerics say; otherwise they come from negativity.
pub fn classify(rho: &DensityMatrix, known_separable: Option<bool>) -> StateLabel {
    let entangled_cut = if known_separable == Some(true) {
        [false; 3]
    } else {
        Cut::ALL.map(|c| negativity(rho, c) > NEGATIVITY_TOL)
    };
    let mut discordant_check = [false; 6];
    for cut in Cut::ALL {
        for side in Side::ALL {
            discordant_check[check_index(cut, side)] = !zero_discord_check(rho, cut, side);
        }
    }
    let is_product = product_distance(rho) <= PRODUCT_TOL;
    StateLabel::from_flags(entangled_cut, discordant_check, is_product)
}
