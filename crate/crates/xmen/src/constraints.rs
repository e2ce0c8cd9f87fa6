//! Multi-state combinatorial trajectory constraints and their indicator.
//!
//! A [`ConstraintSet`] is a conjunction of [`Constraint`] variants. The
//! indicator I_C(τ) evaluates them directly on a trajectory; the encoding
//! module compiles the same semantics into pseudo-boolean form, and the
//! two routes are cross-checked against each other in tests.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::mdp::{GridWorld, Mdp, StateId, Trajectory};

/// Which binary encoding a constraint set needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingKind {
    /// One variable per (s, a) pair with flow conservation; order-free.
    Flow,
    /// One variable per (s, a, t); required for order-dependent constraints.
    TimeIndexed,
}

/// One hard constraint on trajectories.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// None of these states may ever be visited.
    ForbiddenStates(BTreeSet<StateId>),
    /// This state must be visited at least once.
    MustPass(StateId),
    /// Exactly one distinct member of the set is visited.
    ExactlyOneOf(BTreeSet<StateId>),
    /// `first` must be visited strictly before any visited member of
    /// `others`. Vacuously satisfied when no member of `others` is visited.
    Precedence {
        first: StateId,
        others: BTreeSet<StateId>,
    },
    /// At least ⌈fraction · (#visited states)⌉ of the visited states lie in
    /// the region. Visits are counted per time step, start and terminal
    /// included.
    AtLeastFractionInRegion {
        region: BTreeSet<StateId>,
        fraction: f64,
    },
    /// No action may be repeated more than `limit` times consecutively.
    MaxConsecutiveSameAction(usize),
}

/// Rationalizes a fraction in (0, 1] as p/q so the indicator and the
/// pseudo-boolean compilation round the threshold identically:
/// count ≥ ⌈fraction · n⌉ becomes q·count ≥ p·n over integers.
///
/// Continued-fraction convergents recover the simple rational a user
/// actually wrote (1/3, 5/18, …) from its nearest-double image, so the
/// integer test agrees with exact rational arithmetic for any fraction
/// with a denominator up to the cap.
pub(crate) fn fraction_ratio(fraction: f64) -> (u64, u64) {
    const QMAX: u64 = 1_000_000;
    // convergent recurrence h_n = a_n·h_{n−1} + h_{n−2}, seeded with
    // h_{−2}/k_{−2} = 0/1 and h_{−1}/k_{−1} = 1/0
    let (mut h_prev, mut k_prev) = (0u64, 1u64);
    let (mut h, mut k) = (1u64, 0u64);
    let mut r = fraction;
    for _ in 0..64 {
        let a = r.floor();
        if !a.is_finite() || a < 0.0 || a > QMAX as f64 {
            break;
        }
        let a = a as u64;
        let (h_next, k_next) = match (
            a.checked_mul(h).and_then(|v| v.checked_add(h_prev)),
            a.checked_mul(k).and_then(|v| v.checked_add(k_prev)),
        ) {
            (Some(hn), Some(kn)) if kn <= QMAX => (hn, kn),
            _ => break,
        };
        h_prev = h;
        k_prev = k;
        h = h_next;
        k = k_next;
        let frac = r - a as f64;
        if frac < 1e-12 || (h as f64 / k as f64 - fraction).abs() < f64::EPSILON * 2.0 {
            break;
        }
        r = 1.0 / frac;
    }
    if k == 0 || (h as f64 / k as f64 - fraction).abs() > 1e-9 {
        // pathological input; fall back to a fixed-grid quantization
        let p = (fraction * QMAX as f64).round() as u64;
        let g = gcd(p.max(1), QMAX);
        return (p / g, QMAX / g);
    }
    (h, k)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Constraint {
    fn validate(&self, mdp: &Mdp) -> Result<()> {
        let check_state = |s: StateId| -> Result<()> {
            if s >= mdp.n_states() {
                Err(Error::Config(format!(
                    "constraint references state {s}, but the MDP has {} states",
                    mdp.n_states()
                )))
            } else {
                Ok(())
            }
        };
        match self {
            Constraint::ForbiddenStates(set) | Constraint::ExactlyOneOf(set) => {
                set.iter().try_for_each(|&s| check_state(s))
            }
            Constraint::MustPass(s) => check_state(*s),
            Constraint::Precedence { first, others } => {
                check_state(*first)?;
                others.iter().try_for_each(|&s| check_state(s))
            }
            Constraint::AtLeastFractionInRegion { region, fraction } => {
                if !(*fraction > 0.0 && *fraction <= 1.0) {
                    return Err(Error::Config(format!(
                        "region fraction {fraction} outside (0, 1]"
                    )));
                }
                region.iter().try_for_each(|&s| check_state(s))
            }
            Constraint::MaxConsecutiveSameAction(limit) => {
                if *limit == 0 {
                    Err(Error::Config("consecutive-action limit must be ≥ 1".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// True iff the trajectory satisfies this constraint.
    pub fn holds(&self, traj: &Trajectory) -> bool {
        match self {
            Constraint::ForbiddenStates(set) => traj.visited().all(|s| !set.contains(&s)),
            Constraint::MustPass(state) => traj.visited().any(|s| s == *state),
            Constraint::ExactlyOneOf(set) => {
                let visited: BTreeSet<StateId> =
                    traj.visited().filter(|s| set.contains(s)).collect();
                visited.len() == 1
            }
            Constraint::Precedence { first, others } => {
                let first_at = traj.visited().position(|s| s == *first);
                let mut earliest_other = None;
                for (t, s) in traj.visited().enumerate() {
                    if others.contains(&s) {
                        earliest_other = Some(t);
                        break;
                    }
                }
                match (earliest_other, first_at) {
                    (None, _) => true, // vacuous: no other-member visited
                    (Some(_), None) => false,
                    (Some(to), Some(tf)) => tf < to,
                }
            }
            Constraint::AtLeastFractionInRegion { region, fraction } => {
                let (p, q) = fraction_ratio(*fraction);
                let total = traj.len() as u64 + 1;
                let in_region = traj.visited().filter(|s| region.contains(s)).count() as u64;
                // in_region ≥ ⌈fraction · total⌉, in exact integer arithmetic
                q * in_region >= p * total
            }
            Constraint::MaxConsecutiveSameAction(limit) => {
                let mut run = 0usize;
                let mut prev = None;
                for a in traj.actions() {
                    if Some(a) == prev {
                        run += 1;
                    } else {
                        run = 1;
                        prev = Some(a);
                    }
                    if run > *limit {
                        return false;
                    }
                }
                true
            }
        }
    }
}

/// A conjunction of constraints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintSet {
    items: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a set, validating every state reference against the MDP.
    pub fn new(items: Vec<Constraint>, mdp: &Mdp) -> Result<Self> {
        for item in &items {
            item.validate(mdp)?;
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[Constraint] {
        &self.items
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// I_C(τ): 1 iff every constraint holds. A pure function of the
/// trajectory's visited (state, action, time) sequence.
pub fn indicator(traj: &Trajectory, cset: &ConstraintSet) -> bool {
    cset.items.iter().all(|c| c.holds(traj))
}

/// Picks the encoding a constraint set needs: `TimeIndexed` iff it
/// contains an order-dependent variant (Precedence or
/// MaxConsecutiveSameAction), otherwise `Flow`.
pub fn required_encoding(cset: &ConstraintSet) -> EncodingKind {
    let order_dependent = cset.items.iter().any(|c| {
        matches!(
            c,
            Constraint::Precedence { .. } | Constraint::MaxConsecutiveSameAction(_)
        )
    });
    if order_dependent {
        EncodingKind::TimeIndexed
    } else {
        EncodingKind::Flow
    }
}

/// JSON form of a constraint, with states given as grid cells, e.g.
/// `{"type":"exactly_one_of","cells":[[3,4],[5,2]]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstraintSpec {
    ForbiddenStates { cells: Vec<[usize; 2]> },
    MustPass { cell: [usize; 2] },
    ExactlyOneOf { cells: Vec<[usize; 2]> },
    Precedence {
        first: [usize; 2],
        others: Vec<[usize; 2]>,
    },
    AtLeastFractionInRegion {
        cells: Vec<[usize; 2]>,
        fraction: f64,
    },
    MaxConsecutiveSameAction { limit: usize },
}

impl ConstraintSpec {
    /// Resolves cells to state ids on a concrete grid.
    pub fn bind(&self, grid: &GridWorld) -> Result<Constraint> {
        let bind_cells = |cells: &[[usize; 2]]| -> Result<BTreeSet<StateId>> {
            cells.iter().map(|&[x, y]| grid.cell_id(x, y)).collect()
        };
        Ok(match self {
            ConstraintSpec::ForbiddenStates { cells } => {
                Constraint::ForbiddenStates(bind_cells(cells)?)
            }
            ConstraintSpec::MustPass { cell } => {
                Constraint::MustPass(grid.cell_id(cell[0], cell[1])?)
            }
            ConstraintSpec::ExactlyOneOf { cells } => {
                Constraint::ExactlyOneOf(bind_cells(cells)?)
            }
            ConstraintSpec::Precedence { first, others } => Constraint::Precedence {
                first: grid.cell_id(first[0], first[1])?,
                others: bind_cells(others)?,
            },
            ConstraintSpec::AtLeastFractionInRegion { cells, fraction } => {
                Constraint::AtLeastFractionInRegion {
                    region: bind_cells(cells)?,
                    fraction: *fraction,
                }
            }
            ConstraintSpec::MaxConsecutiveSameAction { limit } => {
                Constraint::MaxConsecutiveSameAction(*limit)
            }
        })
    }
}

/// Binds a list of JSON constraint specs against a grid.
pub fn bind_constraints(specs: &[ConstraintSpec], grid: &GridWorld) -> Result<ConstraintSet> {
    let items = specs
        .iter()
        .map(|spec| spec.bind(grid))
        .collect::<Result<Vec<_>>>()?;
    ConstraintSet::new(items, grid.mdp())
}
