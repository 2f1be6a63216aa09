//! Exact propagation of the coherent drive plus dephasing, block by block.
//!
//! A single-ladder Hamiltonian splits the joint space into blocks of at most
//! two levels (`|S,n>` and `|D,n+m>`). Dephasing is diagonal in the basis, so
//! the sub-matrix `rho[A, B]` of any pair of blocks evolves on its own under a
//! small constant generator and can be exponentiated exactly. Heating shifts
//! the phonon number of both indices together and couples neighbouring pairs;
//! it is added by Strang splitting with RK4 sub-steps. When every block is a
//! single level the two parts commute and the split is exact.

use nalgebra::DMatrix;

use crate::dynamics::drive::{build_drive_hamiltonian, DriveParams, SparseOperator};
use crate::dynamics::master::{hermitize, HeatingTerm, Rk4Workspace};
use crate::dynamics::noise::NoiseModel;
use crate::hilbert::FockSpace;
use crate::C64;

/// Largest `k (2 n_max + 1) h` per heating RK4 sub-step.
const HEATING_STEP_PRODUCT: f64 = 0.02;

/// Rotation angle `Omega_max h` of a Strang step when heating is strong;
/// weak heating allows up to four times more.
const SPLIT_ROTATION_PER_STEP: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum PairSet {
    /// Every block pair: the full density matrix is propagated.
    All,
    /// Intra-block elements only, which is enough for populations.
    Diagonal,
}

struct BlockLayout {
    blocks: Vec<Vec<usize>>,
}

impl BlockLayout {
    fn from_operator(h: &SparseOperator) -> Self {
        let dim = h.dim();
        let mut parent: Vec<usize> = (0..dim).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(r, c, _) in h.entries() {
            if r != c {
                let (a, b) = (find(&mut parent, r), find(&mut parent, c));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); dim];
        for i in 0..dim {
            let root = find(&mut parent, i);
            by_root[root].push(i);
        }
        BlockLayout { blocks: by_root.into_iter().filter(|b| !b.is_empty()).collect() }
    }

    fn all_singletons(&self) -> bool {
        self.blocks.iter().all(|b| b.len() == 1)
    }

    fn intra_block_entries(&self) -> Vec<(usize, usize)> {
        self.blocks
            .iter()
            .flat_map(|b| b.iter().flat_map(move |&i| b.iter().map(move |&j| (i, j))))
            .collect()
    }
}

struct PairPropagator {
    a: usize,
    b: usize,
    map: DMatrix<C64>,
}

struct BlockPropagator<'a> {
    layout: &'a BlockLayout,
    pairs: Vec<PairPropagator>,
}

impl<'a> BlockPropagator<'a> {
    fn new(
        layout: &'a BlockLayout,
        h: &DMatrix<C64>,
        levels: usize,
        gamma_phi: f64,
        t: f64,
        set: PairSet,
        skip: impl Fn(usize) -> bool,
    ) -> Self {
        let n = layout.blocks.len();
        let mut pairs = Vec::new();
        for a in 0..n {
            if skip(a) {
                continue;
            }
            let bs: Box<dyn Iterator<Item = usize>> = match set {
                PairSet::All => Box::new(a..n),
                PairSet::Diagonal => Box::new(std::iter::once(a)),
            };
            for b in bs {
                let map = pair_generator(&layout.blocks[a], &layout.blocks[b], h, levels, gamma_phi, t).exp();
                pairs.push(PairPropagator { a, b, map });
            }
        }
        BlockPropagator { layout, pairs }
    }

    fn apply(&self, rho: &mut DMatrix<C64>) {
        for p in &self.pairs {
            let ia = &self.layout.blocks[p.a];
            let ib = &self.layout.blocks[p.b];
            let ka = ia.len();
            let x: Vec<C64> = (0..ka * ib.len()).map(|q| rho[(ia[q % ka], ib[q / ka])]).collect();
            for (pi, row) in p.map.row_iter().enumerate() {
                let v: C64 = row.iter().zip(&x).map(|(m, xv)| m * xv).sum();
                let (i, j) = (ia[pi % ka], ib[pi / ka]);
                rho[(i, j)] = v;
                if p.a != p.b {
                    rho[(j, i)] = v.conj();
                }
            }
        }
    }
}

/// Generator of `vec(rho[A, B])` (column-major) under the drive and dephasing.
fn pair_generator(
    ia: &[usize],
    ib: &[usize],
    h: &DMatrix<C64>,
    levels: usize,
    gamma_phi: f64,
    t: f64,
) -> DMatrix<C64> {
    let (ka, kb) = (ia.len(), ib.len());
    let i = C64::new(0.0, 1.0);
    DMatrix::from_fn(ka * kb, ka * kb, |p, q| {
        let (r, c) = (p % ka, p / ka);
        let (r2, c2) = (q % ka, q / ka);
        let mut g = C64::new(0.0, 0.0);
        if c == c2 {
            g -= i * h[(ia[r], ia[r2])];
        }
        if r == r2 {
            g += i * h[(ib[c2], ib[c])];
        }
        if p == q && (ia[r] < levels) != (ib[c] < levels) {
            g -= C64::new(gamma_phi, 0.0);
        }
        g * t
    })
}

fn heat(
    rho: &mut DMatrix<C64>,
    heating: &HeatingTerm,
    duration: f64,
    entries: Option<&[(usize, usize)]>,
    ws: &mut Rk4Workspace,
) {
    if heating.kappa() == 0.0 || duration == 0.0 {
        return;
    }
    let steps = (duration * heating.max_rate() / HEATING_STEP_PRODUCT).ceil().max(1.0) as usize;
    let h = duration / steps as f64;
    for _ in 0..steps {
        match entries {
            None => ws.step(rho, h, |r, out| {
                out.fill(C64::new(0.0, 0.0));
                heating.accumulate_all(r, out);
            }),
            Some(e) => ws.step_entries(rho, h, e, |r, out| heating.accumulate_entries(r, out, e)),
        }
    }
}

/// Propagate `rho` for `duration`. With [`PairSet::Diagonal`] only the
/// intra-block elements (hence all populations) are meaningful afterwards.
pub(crate) fn propagate(
    rho: &DMatrix<C64>,
    space: &FockSpace,
    drive: Option<&DriveParams>,
    noise: &NoiseModel,
    duration: f64,
    set: PairSet,
) -> DMatrix<C64> {
    let h_sparse = match drive {
        Some(d) => build_drive_hamiltonian(space, d),
        None => SparseOperator::zeros(space.dim()),
    };
    let h = h_sparse.to_dense();
    let layout = BlockLayout::from_operator(&h_sparse);
    let heating = HeatingTerm::new(space, noise.heating_rate);
    let levels = space.levels();
    let mut out = rho.clone();
    if duration == 0.0 {
        return out;
    }
    let entries = match set {
        PairSet::All => None,
        PairSet::Diagonal => Some(layout.intra_block_entries()),
    };
    let mut ws = Rk4Workspace::new(space.dim());

    if heating.kappa() == 0.0 || layout.all_singletons() {
        // Without heating nothing moves between blocks, so empty blocks stay empty.
        let empty = |a: usize| {
            set == PairSet::Diagonal
                && heating.kappa() == 0.0
                && layout.blocks[a].iter().all(|&i| rho[(i, i)].re == 0.0)
        };
        let prop = BlockPropagator::new(&layout, &h, levels, noise.dephasing_rate, duration, set, empty);
        prop.apply(&mut out);
        heat(&mut out, &heating, duration, entries.as_deref(), &mut ws);
    } else {
        let omega_max = h_sparse.inf_norm().max(1e-300);
        let by_heating = HEATING_STEP_PRODUCT * 50.0 / heating.max_rate();
        // splitting error grows like k t (Omega h)^2
        let angle = (0.1 / (heating.kappa() * duration).sqrt())
            .clamp(SPLIT_ROTATION_PER_STEP, 4.0 * SPLIT_ROTATION_PER_STEP);
        let by_rotation = angle / omega_max;
        let steps = (duration / by_heating.min(by_rotation)).ceil().max(1.0) as usize;
        let hstep = duration / steps as f64;
        let prop = BlockPropagator::new(&layout, &h, levels, noise.dephasing_rate, hstep, set, |_| false);
        for _ in 0..steps {
            heat(&mut out, &heating, hstep / 2.0, entries.as_deref(), &mut ws);
            prop.apply(&mut out);
            heat(&mut out, &heating, hstep / 2.0, entries.as_deref(), &mut ws);
        }
    }
    if set == PairSet::All {
        hermitize(&mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::drive::{rabi_frequency, Sideband};
    use crate::dynamics::master::{default_dt, evolve};
    use crate::hilbert::{fock_state, thermal_state, ElectronicLevel, JointState, ModeLabel};
    use std::f64::consts::{PI, TAU};

    fn space(n_max: usize) -> FockSpace {
        FockSpace::new(n_max, ModeLabel::Axial, TAU * 4.51e6).unwrap()
    }

    fn max_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Superposition with coherences between many blocks.
    fn coherent_mixture(s: FockSpace) -> JointState {
        let dim = s.dim();
        let v: Vec<C64> = (0..dim).map(|k| C64::from_polar(1.0 / (1.0 + k as f64), 0.7 * k as f64)).collect();
        let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let pure = DMatrix::from_fn(dim, dim, |i, j| v[i] * v[j].conj() / norm);
        let th = thermal_state(s, ElectronicLevel::S, 0.8).unwrap();
        let rho = pure * C64::new(0.5, 0.0) + th.rho() * C64::new(0.5, 0.0);
        JointState::from_density_matrix(s, rho).unwrap()
    }

    #[test]
    fn exact_blocks_match_rk4_without_heating() {
        let s = space(6);
        let st = coherent_mixture(s);
        let d = DriveParams::from_sideband_rabi(TAU * 21e3, 0.05, Sideband::Blue)
            .unwrap()
            .with_detuning(TAU * 3e3)
            .with_phase(0.4);
        let noise = NoiseModel { dephasing_rate: 900.0, ..Default::default() };
        let t = 61e-6;
        let exact = propagate(st.rho(), &s, Some(&d), &noise, t, PairSet::All);
        let rk = evolve(&st, Some(&d), &noise, t, default_dt(&s, Some(&d), &noise)).unwrap();
        assert!(max_diff(&exact, rk.rho()) < 1e-9, "diff {}", max_diff(&exact, rk.rho()));
    }

    #[test]
    fn split_heating_matches_rk4() {
        let s = space(8);
        let st = coherent_mixture(s);
        let d = DriveParams::from_sideband_rabi(TAU * 21e3, 0.05, Sideband::Red).unwrap();
        // exaggerated heating so the splitting error is visible
        let noise = NoiseModel { dephasing_rate: 500.0, heating_rate: 400.0, ..Default::default() };
        let t = 150e-6;
        let split = propagate(st.rho(), &s, Some(&d), &noise, t, PairSet::All);
        let rk = evolve(&st, Some(&d), &noise, t, default_dt(&s, Some(&d), &noise)).unwrap();
        let diff = max_diff(&split, rk.rho());
        assert!(diff < 1e-5, "diff {diff}");
        let diag = propagate(st.rho(), &s, Some(&d), &noise, t, PairSet::Diagonal);
        for i in 0..s.dim() {
            assert!((diag[(i, i)] - rk.rho()[(i, i)]).norm() < 1e-5);
        }
    }

    #[test]
    fn drive_free_heating_is_exact_split() {
        let s = space(10);
        let st = coherent_mixture(s);
        let noise = NoiseModel { dephasing_rate: 1456.0, heating_rate: 50.0, ..Default::default() };
        let t = 4e-3;
        let split = propagate(st.rho(), &s, None, &noise, t, PairSet::All);
        let rk = evolve(&st, None, &noise, t, default_dt(&s, None, &noise)).unwrap();
        assert!(max_diff(&split, rk.rho()) < 1e-9);
    }

    #[test]
    fn populations_only_mode_agrees_with_full() {
        let s = space(10);
        let st = thermal_state(s, ElectronicLevel::S, 1.3).unwrap();
        let d = DriveParams::from_sideband_rabi(TAU * 21e3, 0.05, Sideband::Blue).unwrap();
        let noise = NoiseModel { dephasing_rate: 700.0, ..Default::default() };
        let full = propagate(st.rho(), &s, Some(&d), &noise, 0.3e-3, PairSet::All);
        let diag = propagate(st.rho(), &s, Some(&d), &noise, 0.3e-3, PairSet::Diagonal);
        for i in 0..s.dim() {
            assert!((full[(i, i)] - diag[(i, i)]).norm() < 1e-13);
        }
    }

    #[test]
    fn exact_pi_pulse() {
        let s = space(10);
        let g = fock_state(s, ElectronicLevel::S, 0).unwrap();
        let d = DriveParams::from_sideband_rabi(TAU * 21e3, 0.05, Sideband::Blue).unwrap();
        let out = propagate(g.rho(), &s, Some(&d), &NoiseModel::noiseless(), PI / rabi_frequency(0, &d), PairSet::All);
        let st = JointState::from_density_matrix(s, out).unwrap();
        assert!((st.excited_population() - 1.0).abs() < 1e-12);
    }
}
