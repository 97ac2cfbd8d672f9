//! Explicit linear operators over the stacked beamformer vector.
//!
//! The beamformers enter the echo only through `X̄`. Reshaping each slot of
//! a signature `v_{n,l} = vec(V_{n,l})` turns `X̄ v` into `T̄ w` with
//! `w = [vec(W_1); ...; vec(W_N)]`, using the column-major identity
//! `(I ⊗ (s^T W^T)) vec(V) = V^T W s`. The same construction applied to
//! every clutter factor gives `T̄_{m,r} = J̄_m [...]`, so the clutter-plus-noise
//! covariance becomes `Σ T̄_{m,r} w w^H T̄_{m,r}^H + σ_r^2 I`.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::radar_scene::{shift_rows, Dims, InnerCcmFactors};
use crate::signal_model::SymbolFrame;
use crate::{CMatrix, CVector, DfrcError, Result};

/// Per-subcarrier transmit matrices `W_n` (`N_t x K`).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub mats: Vec<CMatrix>,
}

impl BeamformerSet {
    pub fn zeros(dims: &Dims) -> BeamformerSet {
        BeamformerSet {
            mats: vec![CMatrix::zeros(dims.tx, dims.users); dims.subcarriers],
        }
    }

    /// `w = [vec(W_1); ...; vec(W_N)]`, column-major `vec`.
    pub fn stack(&self) -> CVector {
        let total = self.mats.iter().map(|m| m.len()).sum();
        let mut w = CVector::zeros(total);
        let mut offset = 0;
        for m in &self.mats {
            w.rows_mut(offset, m.len()).copy_from_slice(m.as_slice());
            offset += m.len();
        }
        w
    }

    pub fn from_stacked(w: &CVector, dims: &Dims) -> Result<BeamformerSet> {
        if w.len() != dims.beam_len() {
            return Err(DfrcError::DimensionMismatch {
                what: "stacked beamformer",
                expected: dims.beam_len(),
                found: w.len(),
            });
        }
        let block = dims.tx * dims.users;
        let mats = (0..dims.subcarriers)
            .map(|n| {
                CMatrix::from_column_slice(
                    dims.tx,
                    dims.users,
                    &w.as_slice()[n * block..(n + 1) * block],
                )
            })
            .collect();
        Ok(BeamformerSet { mats })
    }

    /// Realized transmit energy `Σ_l ||W_n s_n[l]||^2` on each subcarrier.
    pub fn realized_power(&self, symbols: &SymbolFrame) -> Vec<f64> {
        self.mats
            .iter()
            .zip(&symbols.symbols)
            .map(|(w, s)| (w * s).norm_squared())
            .collect()
    }
}

/// Splits a per-subcarrier signature into its slot matrices `V_l`
/// (`N_t x N_s N_r`) with `vec(V_l)` the `l`-th subvector.
pub fn reshape_signature(v: &CVector, tx: usize, slots: usize) -> Result<Vec<CMatrix>> {
    if tx == 0 || slots == 0 || v.len() % (tx * slots) != 0 {
        return Err(DfrcError::InvalidInput(format!(
            "signature of length {} does not split into {slots} slots of {tx}-row matrices",
            v.len()
        )));
    }
    let per_slot = v.len() / slots;
    Ok((0..slots)
        .map(|l| {
            CMatrix::from_column_slice(
                tx,
                per_slot / tx,
                &v.as_slice()[l * per_slot..(l + 1) * per_slot],
            )
        })
        .collect())
}

/// Lifts a stacked signature `u` into the operator `T` with `T w = X̄ u`:
/// subcarrier block `n` is `V̄_n^T (S_n^T ⊗ I_{N_t})`.
pub fn lift_signature(u: &CVector, symbols: &SymbolFrame, dims: &Dims) -> Result<CMatrix> {
    if u.len() != dims.stacked_len() {
        return Err(DfrcError::DimensionMismatch {
            what: "stacked signature",
            expected: dims.stacked_len(),
            found: u.len(),
        });
    }
    if symbols.num_subcarriers() != dims.subcarriers
        || symbols.num_users() != dims.users
        || symbols.frame_length() != dims.slots
    {
        return Err(DfrcError::DimensionMismatch {
            what: "symbol frame",
            expected: dims.subcarriers * dims.users * dims.slots,
            found: symbols.num_subcarriers() * symbols.num_users() * symbols.frame_length(),
        });
    }
    let (nt, k, slot) = (dims.tx, dims.users, dims.slot_len());
    let sig = dims.signature_len();
    let mut t = CMatrix::zeros(dims.echo_len(), dims.beam_len());
    for n in 0..dims.subcarriers {
        let blocks = reshape_signature(&u.rows(n * sig, sig).into_owned(), nt, dims.slots)?;
        let s = &symbols.symbols[n];
        for (l, v) in blocks.iter().enumerate() {
            // entry [(l, c), (n, k, t)] = V_l[t, c] s_l[k]
            for c in 0..slot {
                let row = l * slot + c;
                for kk in 0..k {
                    let sym = s[(kk, l)];
                    let col0 = n * nt * k + kk * nt;
                    for tt in 0..nt {
                        t[(row, col0 + tt)] = v[(tt, c)] * sym;
                    }
                }
            }
        }
    }
    Ok(t)
}

/// `T̄_0` for the target signature `v_0`.
pub fn build_t0(target_signature: &CVector, symbols: &SymbolFrame, dims: &Dims) -> Result<CMatrix> {
    lift_signature(target_signature, symbols, dims)
}

/// One clutter operator `T̄_{m,r}` tagged with its range cell and rank index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClutterOperator {
    pub offset: i64,
    pub rank_index: usize,
    pub op: CMatrix,
}

/// `T̄_{m,r} = J̄_m [Ū_{m,r,1}^T (S_1^T ⊗ I), ...]` for every factor, flattened.
pub fn build_tmr(
    factors: &[InnerCcmFactors],
    symbols: &SymbolFrame,
    dims: &Dims,
) -> Result<Vec<ClutterOperator>> {
    let mut ops = Vec::new();
    for cell in factors {
        for (r, u) in cell.factors.iter().enumerate() {
            let lifted = lift_signature(u, symbols, dims)?;
            ops.push(ClutterOperator {
                offset: cell.offset,
                rank_index: r,
                op: shift_rows(cell.offset, dims, &lifted),
            });
        }
    }
    Ok(ops)
}

/// All operators of one design problem. Shapes are `(L N_s N_r) x (N N_t K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedOperators {
    pub dims: Dims,
    pub t0: CMatrix,
    pub clutter: Vec<ClutterOperator>,
}

impl LiftedOperators {
    pub fn build(
        target_signature: &CVector,
        factors: &[InnerCcmFactors],
        symbols: &SymbolFrame,
        dims: Dims,
    ) -> Result<LiftedOperators> {
        Ok(LiftedOperators {
            t0: build_t0(target_signature, symbols, &dims)?,
            clutter: build_tmr(factors, symbols, &dims)?,
            dims,
        })
    }

    /// Writes `<stem>.bin` (every operator, row-major little-endian
    /// `(re, im)` f64 pairs, `T̄_0` first) and `<stem>.json` with the shapes
    /// and `(m, r)` tags.
    pub fn dump(&self, stem: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            rows: usize,
            cols: usize,
            dims: &'a Dims,
            /// `(m, r)` tags of the clutter operators in file order after `T̄_0`.
            clutter_tags: Vec<(i64, usize)>,
            value_layout: &'static str,
        }
        let mut bin = std::io::BufWriter::new(std::fs::File::create(stem.with_extension("bin"))?);
        for op in std::iter::once(&self.t0).chain(self.clutter.iter().map(|c| &c.op)) {
            for r in 0..op.nrows() {
                for c in 0..op.ncols() {
                    let z = op[(r, c)];
                    bin.write_all(&z.re.to_le_bytes())?;
                    bin.write_all(&z.im.to_le_bytes())?;
                }
            }
        }
        bin.flush()?;
        let sidecar = Sidecar {
            rows: self.t0.nrows(),
            cols: self.t0.ncols(),
            dims: &self.dims,
            clutter_tags: self
                .clutter
                .iter()
                .map(|c| (c.offset, c.rank_index))
                .collect(),
            value_layout: "row-major little-endian f64 (re, im) pairs",
        };
        std::fs::write(
            stem.with_extension("json"),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
        Ok(())
    }

    /// `T̄_0 w`.
    pub fn target_echo(&self, w: &CVector) -> CVector {
        &self.t0 * w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm_channel::complex_normal;
    use crate::radar_scene::{
        build_xbar, clutter_factors, lifted_shift, stacked_signature, ClutterField,
        ClutterStatistics, Scatterer,
    };
    use crate::signal_model::tests::sim_grid;
    use crate::signal_model::{generate_symbols, ArrayGeometry, Constellation, SPEED_OF_LIGHT};
    use crate::C64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn setup(
        n: usize,
        l: usize,
        ns: usize,
        nt: usize,
        nr: usize,
        k: usize,
    ) -> (crate::signal_model::OfdmGrid, ArrayGeometry, Dims) {
        let mut grid = sim_grid(n, ns);
        grid.frame_length = l;
        let geom = ArrayGeometry {
            num_tx: nt,
            num_rx: nr,
            tx_spacing_m: 2.0 * SPEED_OF_LIGHT / 2.4e9,
            rx_spacing_m: 0.5 * SPEED_OF_LIGHT / 2.4e9,
        };
        let dims = Dims::new(&grid, &geom, k);
        (grid, geom, dims)
    }

    fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> CVector {
        CVector::from_fn(len, |_, _| complex_normal(rng))
    }

    #[test]
    fn stack_round_trip() {
        let (_, _, dims) = setup(3, 2, 2, 4, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_vec(&mut rng, dims.beam_len());
        let set = BeamformerSet::from_stacked(&w, &dims).unwrap();
        assert_eq!(set.stack(), w);
        // column-major: second entry of w is W_1[1, 0]
        assert_eq!(set.mats[0][(1, 0)], w[1]);
        assert_eq!(set.mats[1][(0, 0)], w[12]);
        assert!(BeamformerSet::from_stacked(&random_vec(&mut rng, 5), &dims).is_err());
    }

    #[test]
    fn reshape_round_trip_and_single_tx() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_vec(&mut rng, 2 * 6 * 3);
        let parts = reshape_signature(&v, 3, 2).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].shape(), (3, 6));
        let back: Vec<C64> = parts.iter().flat_map(|p| p.as_slice().to_vec()).collect();
        assert_eq!(back, v.as_slice());
        let parts = reshape_signature(&v, 1, 2).unwrap();
        assert_eq!(parts[1].shape(), (1, 18));
        assert_eq!(parts[1].as_slice(), &v.as_slice()[18..]);
        assert!(reshape_signature(&v, 5, 2).is_err());
    }

    #[test]
    fn kronecker_reshape_identity() {
        // (I ⊗ (s^T W^T)) v = V^T W s
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (nt, k, m) = (3, 2, 4);
        let w = CMatrix::from_fn(nt, k, |_, _| complex_normal(&mut rng));
        let s = random_vec(&mut rng, k);
        let v = random_vec(&mut rng, nt * m);
        let row = (&w * &s).transpose();
        let lhs = CMatrix::identity(m, m).kronecker(&row) * &v;
        let vm = &reshape_signature(&v, nt, 1).unwrap()[0];
        let rhs = vm.transpose() * &w * &s;
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn scalar_t0_collapses_to_signature() {
        let (grid, geom, dims) = setup(1, 1, 2, 3, 2, 1);
        let s = SymbolFrame {
            symbols: vec![CMatrix::from_element(1, 1, C64::new(1.0, 0.0))],
        };
        let target = Scatterer::uniform(0.3, 20.0, 0.5, 1, 0);
        let v0 = stacked_signature(&target, &grid, &geom).unwrap();
        let t0 = build_t0(&v0, &s, &dims).unwrap();
        let vm = &reshape_signature(&v0, 3, 1).unwrap()[0];
        assert_eq!(t0, vm.transpose());
        assert_eq!(t0.shape(), (dims.echo_len(), dims.beam_len()));
        assert_eq!((&t0 * CVector::zeros(dims.beam_len())).norm(), 0.0);
    }

    #[test]
    fn t0_reproduces_xbar_product() {
        for seed in 0..6 {
            let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
            let (grid, geom, dims) = setup(3, 3, 3, 3, 2, 2);
            let s = generate_symbols(2, &grid, Constellation::Qpsk, seed);
            let target = Scatterer {
                azimuth_rad: rng.gen_range(-1.0..1.0),
                speed_m_s: rng.gen_range(0.0..40.0),
                amplitudes: (0..3).map(|_| complex_normal(&mut rng)).collect(),
                range_cell_offset: 0,
            };
            let v0 = stacked_signature(&target, &grid, &geom).unwrap();
            let w = random_vec(&mut rng, dims.beam_len());
            let set = BeamformerSet::from_stacked(&w, &dims).unwrap();
            let t0 = build_t0(&v0, &s, &dims).unwrap();
            let lhs = &t0 * &w;
            let rhs = build_xbar(&set.mats, &s, &dims).unwrap() * &v0;
            assert!((&lhs - &rhs).norm() < 1e-10 * rhs.norm());
        }
    }

    #[test]
    fn clutter_operators_reproduce_dense_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (grid, geom, dims) = setup(2, 2, 3, 2, 2, 2);
        let s = generate_symbols(2, &grid, Constellation::Qpsk, 5);
        let field = ClutterField::random(1, 2, (0.0, 2.0 * PI), (0.0, 50.0), 0.2, 2, &mut rng);
        for stats in [
            ClutterStatistics::Coherent,
            ClutterStatistics::IndependentPerSubcarrier,
        ] {
            let factors = clutter_factors(&field, &grid, &geom, stats).unwrap();
            let ops = build_tmr(&factors, &s, &dims).unwrap();
            let w = random_vec(&mut rng, dims.beam_len());
            let set = BeamformerSet::from_stacked(&w, &dims).unwrap();
            let x = build_xbar(&set.mats, &s, &dims).unwrap();
            for cell in &factors {
                let j = lifted_shift(cell.offset, dims.samples, dims.rx, dims.slots)
                    .map(|v| C64::new(v, 0.0));
                let jx = &j * &x;
                let rhs = &jx * cell.dense(dims.stacked_len()) * jx.adjoint();
                let mut lhs = CMatrix::zeros(dims.echo_len(), dims.echo_len());
                for op in ops.iter().filter(|o| o.offset == cell.offset) {
                    let tw = &op.op * &w;
                    lhs += &tw * tw.adjoint();
                }
                assert!((&lhs - &rhs).norm() < 1e-9 * rhs.norm());
            }
        }
    }

    #[test]
    fn empty_factors_and_single_factor() {
        let (grid, geom, dims) = setup(2, 2, 2, 2, 2, 1);
        let s = generate_symbols(1, &grid, Constellation::Qpsk, 9);
        assert!(build_tmr(&[], &s, &dims).unwrap().is_empty());
        let u = stacked_signature(&Scatterer::uniform(0.1, 3.0, 1.0, 2, 0), &grid, &geom).unwrap();
        let f = InnerCcmFactors {
            offset: 0,
            factors: vec![u.clone()],
        };
        let ops = build_tmr(&[f], &s, &dims).unwrap();
        assert_eq!(ops.len(), 1);
        assert_eq!(ops[0].op, build_t0(&u, &s, &dims).unwrap());
    }

    #[test]
    fn dump_writes_binary_and_sidecar() {
        let (grid, geom, dims) = setup(1, 1, 2, 2, 1, 1);
        let s = generate_symbols(1, &grid, Constellation::Qpsk, 1);
        let v0 = stacked_signature(&Scatterer::uniform(0.0, 0.0, 1.0, 1, 0), &grid, &geom).unwrap();
        let ops = LiftedOperators::build(&v0, &[], &s, dims).unwrap();
        let dir = std::env::temp_dir().join(format!("dfrc-dump-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let stem = dir.join("ops");
        ops.dump(&stem).unwrap();
        let bytes = std::fs::read(stem.with_extension("bin")).unwrap();
        assert_eq!(bytes.len(), dims.echo_len() * dims.beam_len() * 16);
        let first = f64::from_le_bytes(bytes[0..8].try_into().unwrap());
        assert_eq!(first, ops.t0[(0, 0)].re);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json")).unwrap())
                .unwrap();
        assert_eq!(meta["rows"], dims.echo_len());
        std::fs::remove_dir_all(dir).ok();
    }

    proptest! {
        #[test]
        fn t0_is_linear(seed in 0u64..100, alpha in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (grid, geom, dims) = setup(2, 2, 2, 2, 2, 2);
            let s = generate_symbols(2, &grid, Constellation::Qpsk, seed);
            let v0 = stacked_signature(&Scatterer::uniform(0.2, 10.0, 0.1, 2, 0), &grid, &geom).unwrap();
            let t0 = build_t0(&v0, &s, &dims).unwrap();
            let a = random_vec(&mut rng, dims.beam_len());
            let b = random_vec(&mut rng, dims.beam_len());
            let lhs = &t0 * (&a * C64::new(alpha, 0.0) + &b);
            let rhs = (&t0 * &a) * C64::new(alpha, 0.0) + &t0 * &b;
            prop_assert!((lhs - &rhs).norm() <= 1e-12 * rhs.norm().max(1.0));
        }
    }
}
