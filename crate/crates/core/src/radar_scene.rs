//! Target and clutter geometry, space-time signatures, range shift
//! matrices, inner clutter covariance factors and the unlifted echo model.
//!
//! Echo-space vectors are ordered slot-major: index
//! `l * (N_s N_r) + i * N_r + r` for slot `l`, fast-time sample `i` and
//! receive antenna `r`. Signatures append the transmit antenna as the
//! fastest index, matching `q ⊗ p ⊗ b ⊗ a`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::comm_channel::complex_normal;
use crate::signal_model::{
    baseband_freq, fast_time_phase, slow_time_phase, steering_rx, steering_tx, ArrayGeometry,
    OfdmGrid, SymbolFrame,
};
use crate::{CMatrix, CVector, DfrcError, Result, C64};

/// Problem sizes shared by the scene, the lifting and the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub subcarriers: usize,
    pub slots: usize,
    pub samples: usize,
    pub rx: usize,
    pub tx: usize,
    pub users: usize,
}

impl Dims {
    pub fn new(grid: &OfdmGrid, geom: &ArrayGeometry, users: usize) -> Dims {
        Dims {
            subcarriers: grid.num_subcarriers,
            slots: grid.frame_length,
            samples: grid.samples_per_symbol,
            rx: geom.num_rx,
            tx: geom.num_tx,
            users,
        }
    }

    /// Length of the receive-filter / echo vector, `L N_s N_r`.
    pub fn echo_len(&self) -> usize {
        self.slots * self.samples * self.rx
    }

    /// Length of one slot of an echo, `N_s N_r`.
    pub fn slot_len(&self) -> usize {
        self.samples * self.rx
    }

    /// Length of a per-subcarrier signature, `L N_s N_r N_t`.
    pub fn signature_len(&self) -> usize {
        self.echo_len() * self.tx
    }

    /// Length of a stacked signature, `N L N_s N_r N_t`.
    pub fn stacked_len(&self) -> usize {
        self.subcarriers * self.signature_len()
    }

    /// Length of the stacked beamformer vector, `N N_t K`.
    pub fn beam_len(&self) -> usize {
        self.subcarriers * self.tx * self.users
    }
}

/// A point scatterer. `amplitudes[n]` is the (nominal) complex reflection
/// coefficient on subcarrier `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub azimuth_rad: f64,
    pub speed_m_s: f64,
    pub amplitudes: Vec<C64>,
    pub range_cell_offset: i64,
}

impl Scatterer {
    /// Scatterer with the same real amplitude `sqrt(power)` on every subcarrier.
    pub fn uniform(
        azimuth_rad: f64,
        speed_m_s: f64,
        power: f64,
        subcarriers: usize,
        offset: i64,
    ) -> Self {
        Scatterer {
            azimuth_rad,
            speed_m_s,
            amplitudes: vec![C64::new(power.sqrt(), 0.0); subcarriers],
            range_cell_offset: offset,
        }
    }

    /// Expected power `E|α_n|^2` on subcarrier `n` (0-based).
    pub fn power(&self, n: usize) -> f64 {
        self.amplitudes[n].norm_sqr()
    }

    /// Restrict to a contiguous subcarrier range (0-based).
    pub fn slice(&self, start: usize, count: usize) -> Scatterer {
        Scatterer {
            amplitudes: self.amplitudes[start..start + count].to_vec(),
            ..self.clone()
        }
    }
}

/// How clutter reflection coefficients vary across subcarriers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClutterStatistics {
    /// One random amplitude per patch shared by all subcarriers.
    #[default]
    Coherent,
    /// Independent amplitudes per subcarrier (block-diagonal inner CCM).
    IndependentPerSubcarrier,
}

/// Clutter patches grouped by range cell `m ∈ {-M, ..., M}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClutterField {
    pub max_offset: usize,
    /// `cells[m + M]` holds the patches of range cell `m`.
    pub cells: Vec<Vec<Scatterer>>,
}

impl ClutterField {
    pub fn empty() -> ClutterField {
        ClutterField {
            max_offset: 0,
            cells: vec![Vec::new()],
        }
    }

    /// Patches with azimuth uniform on `(az.0, az.1]` and speed uniform on
    /// `(speed.0, speed.1]`, every amplitude `sqrt(power)`.
    pub fn random<R: Rng + ?Sized>(
        max_offset: usize,
        patches_per_cell: usize,
        azimuth_range_rad: (f64, f64),
        speed_range_m_s: (f64, f64),
        power: f64,
        subcarriers: usize,
        rng: &mut R,
    ) -> ClutterField {
        let mut half_open = |lo: f64, hi: f64| hi - rng.gen::<f64>() * (hi - lo);
        let cells = (-(max_offset as i64)..=max_offset as i64)
            .map(|m| {
                (0..patches_per_cell)
                    .map(|_| {
                        let az = half_open(azimuth_range_rad.0, azimuth_range_rad.1);
                        let v = half_open(speed_range_m_s.0, speed_range_m_s.1);
                        Scatterer::uniform(az, v, power, subcarriers, m)
                    })
                    .collect()
            })
            .collect();
        ClutterField { max_offset, cells }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.len() != 2 * self.max_offset + 1 {
            return Err(DfrcError::DimensionMismatch {
                what: "clutter range cells",
                expected: 2 * self.max_offset + 1,
                found: self.cells.len(),
            });
        }
        for (idx, cell) in self.cells.iter().enumerate() {
            let m = idx as i64 - self.max_offset as i64;
            if let Some(p) = cell.iter().find(|p| p.range_cell_offset != m) {
                return Err(DfrcError::InvalidInput(format!(
                    "patch with offset {} stored in cell {m}",
                    p.range_cell_offset
                )));
            }
        }
        Ok(())
    }

    pub fn slice(&self, start: usize, count: usize) -> ClutterField {
        ClutterField {
            max_offset: self.max_offset,
            cells: self
                .cells
                .iter()
                .map(|c| c.iter().map(|p| p.slice(start, count)).collect())
                .collect(),
        }
    }

    pub fn num_patches(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }
}

/// Gram factors of one inner clutter covariance: `M_m = Σ_r u_r u_r^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerCcmFactors {
    pub offset: i64,
    pub factors: Vec<CVector>,
}

impl InnerCcmFactors {
    pub fn rank(&self) -> usize {
        self.factors.len()
    }

    /// Dense `M_m`. Only sensible on small instances.
    pub fn dense(&self, len: usize) -> CMatrix {
        let mut m = CMatrix::zeros(len, len);
        for u in &self.factors {
            m.ger(C64::new(1.0, 0.0), u, &u.conjugate(), C64::new(1.0, 0.0));
        }
        m
    }
}

/// Per-subcarrier signature `α_n q(f) ⊗ p(f) ⊗ b(θ, f_n) ⊗ a(θ, f_n)` with
/// `f` the scatterer's baseband frequency on subcarrier `n` (1-based).
pub fn space_time_signature(
    s: &Scatterer,
    n: usize,
    grid: &OfdmGrid,
    geom: &ArrayGeometry,
) -> Result<CVector> {
    if n == 0 || n > grid.num_subcarriers || n > s.amplitudes.len() {
        return Err(DfrcError::InvalidInput(format!(
            "subcarrier {n} outside 1..={}",
            grid.num_subcarriers.min(s.amplitudes.len())
        )));
    }
    let c = grid.wave_speed_m_s;
    let f_n = grid.subcarrier_freq(n);
    let f_b = baseband_freq(n, s.speed_m_s, grid);
    let q = slow_time_phase(f_b, grid);
    let p = fast_time_phase(f_b, grid);
    let b = steering_rx(s.azimuth_rad, f_n, geom, c)?;
    let a = steering_tx(s.azimuth_rad, f_n, geom, c)?;
    let v = q.kronecker(&p.kronecker(&b.kronecker(&a)));
    Ok(v * s.amplitudes[n - 1])
}

/// Signatures of all subcarriers stacked into one vector.
pub fn stacked_signature(s: &Scatterer, grid: &OfdmGrid, geom: &ArrayGeometry) -> Result<CVector> {
    let parts = (1..=grid.num_subcarriers)
        .map(|n| space_time_signature(s, n, grid, geom))
        .collect::<Result<Vec<_>>>()?;
    let total = parts.iter().map(|p| p.len()).sum();
    let mut out = CVector::zeros(total);
    let mut offset = 0;
    for p in parts {
        out.rows_mut(offset, p.len()).copy_from(&p);
        offset += p.len();
    }
    Ok(out)
}

/// Range shift `J_m`: `J_m(i, j) = 1` iff `i - j + m = 0`.
pub fn shift_matrix(m: i64, samples: usize) -> DMatrix<f64> {
    if m.unsigned_abs() as usize >= samples {
        log::warn!("range offset {m} shifts all {samples} fast-time samples out of the window");
    }
    DMatrix::from_fn(samples, samples, |i, j| {
        if i as i64 - j as i64 + m == 0 {
            1.0
        } else {
            0.0
        }
    })
}

/// `J̄_m = I_L ⊗ (J_m^T ⊗ I_{N_r})`.
pub fn lifted_shift(m: i64, samples: usize, rx: usize, slots: usize) -> DMatrix<f64> {
    let inner = shift_matrix(m, samples)
        .transpose()
        .kronecker(&DMatrix::identity(rx, rx));
    DMatrix::identity(slots, slots).kronecker(&inner)
}

/// Applies `J̄_m` to the rows of `x` without forming it: row `(l, j, r)` of
/// the result is row `(l, j - m, r)` of `x`, or zero when out of range.
pub fn shift_rows(m: i64, dims: &Dims, x: &CMatrix) -> CMatrix {
    let (ns, nr) = (dims.samples as i64, dims.rx);
    let mut out = CMatrix::zeros(x.nrows(), x.ncols());
    for l in 0..dims.slots {
        for j in 0..ns {
            let src = j - m;
            if !(0..ns).contains(&src) {
                continue;
            }
            for r in 0..nr {
                let dst_row = l * dims.slot_len() + j as usize * nr + r;
                let src_row = l * dims.slot_len() + src as usize * nr + r;
                out.row_mut(dst_row).copy_from(&x.row(src_row));
            }
        }
    }
    out
}

/// Inner-CCM factors of one range cell built from its patches.
///
/// Patch `p` has amplitudes `ξ_p a_{p,n}` with `ξ_p ~ CN(0, 1)`; under
/// [`ClutterStatistics::Coherent`] the factor is the stacked signature with
/// amplitudes `a_{p,n}`, otherwise each subcarrier block gets its own factor.
pub fn inner_ccm_factors(
    cell: &[Scatterer],
    offset: i64,
    grid: &OfdmGrid,
    geom: &ArrayGeometry,
    stats: ClutterStatistics,
) -> Result<InnerCcmFactors> {
    let mut factors = Vec::new();
    for patch in cell {
        if patch.range_cell_offset != offset {
            return Err(DfrcError::InvalidInput(format!(
                "patch offset {} does not match cell {offset}",
                patch.range_cell_offset
            )));
        }
        let stacked = stacked_signature(patch, grid, geom)?;
        match stats {
            ClutterStatistics::Coherent => factors.push(stacked),
            ClutterStatistics::IndependentPerSubcarrier => {
                let block = stacked.len() / grid.num_subcarriers;
                for n in 0..grid.num_subcarriers {
                    let mut u = CVector::zeros(stacked.len());
                    u.rows_mut(n * block, block)
                        .copy_from(&stacked.rows(n * block, block));
                    factors.push(u);
                }
            }
        }
    }
    Ok(InnerCcmFactors { offset, factors })
}

/// Factors of every range cell of `field`, ordered `m = -M..=M`.
pub fn clutter_factors(
    field: &ClutterField,
    grid: &OfdmGrid,
    geom: &ArrayGeometry,
    stats: ClutterStatistics,
) -> Result<Vec<InnerCcmFactors>> {
    field.validate()?;
    field
        .cells
        .iter()
        .enumerate()
        .map(|(idx, cell)| {
            let m = idx as i64 - field.max_offset as i64;
            inner_ccm_factors(cell, m, grid, geom, stats)
        })
        .collect()
}

/// Relative eigenvalue cutoff for dense inner CCMs.
pub const EIGEN_CUTOFF: f64 = 1e-10;

/// Factors of an externally supplied dense inner CCM via its
/// eigendecomposition `Σ γ_r ũ_r ũ_r^H`, keeping `γ_r > 1e-10 γ_max`.
pub fn factors_from_dense(offset: i64, m: &CMatrix) -> Result<InnerCcmFactors> {
    if m.nrows() != m.ncols() {
        return Err(DfrcError::NotHermitianPsd(format!(
            "{}x{} matrix is not square",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let asym = (m - m.adjoint()).norm();
    if asym > 1e-9 * scale {
        return Err(DfrcError::NotHermitianPsd(format!(
            "Hermitian residual {asym:.3e} relative to norm {scale:.3e}"
        )));
    }
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let min_eig = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -1e-10 * max_eig.max(scale) {
        return Err(DfrcError::NotHermitianPsd(format!(
            "minimum eigenvalue {min_eig:.3e} against maximum {max_eig:.3e}"
        )));
    }
    let factors = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &g)| g > EIGEN_CUTOFF * max_eig)
        .map(|(r, &g)| eig.eigenvectors.column(r) * C64::new(g.sqrt(), 0.0))
        .collect();
    Ok(InnerCcmFactors { offset, factors })
}

fn check_beamformers(w: &[CMatrix], s: &SymbolFrame, dims: &Dims) -> Result<()> {
    if w.len() != dims.subcarriers || s.num_subcarriers() != dims.subcarriers {
        return Err(DfrcError::DimensionMismatch {
            what: "subcarriers of beamformers and symbols",
            expected: dims.subcarriers,
            found: w.len().min(s.num_subcarriers()),
        });
    }
    for (wn, sn) in w.iter().zip(&s.symbols) {
        if wn.nrows() != dims.tx || wn.ncols() != dims.users {
            return Err(DfrcError::DimensionMismatch {
                what: "beamformer shape",
                expected: dims.tx * dims.users,
                found: wn.nrows() * wn.ncols(),
            });
        }
        if sn.nrows() != dims.users || sn.ncols() != dims.slots {
            return Err(DfrcError::DimensionMismatch {
                what: "symbol matrix shape",
                expected: dims.users * dims.slots,
                found: sn.nrows() * sn.ncols(),
            });
        }
    }
    Ok(())
}

/// Dense `X̄ = [X̄_1, ..., X̄_N]` with
/// `X̄_n = BlkDiag_l { I_{N_s N_r} ⊗ (s_n[l]^T W_n^T) }`.
pub fn build_xbar(w: &[CMatrix], s: &SymbolFrame, dims: &Dims) -> Result<CMatrix> {
    check_beamformers(w, s, dims)?;
    let slot = dims.slot_len();
    let sig = dims.signature_len();
    let mut x = CMatrix::zeros(dims.echo_len(), dims.stacked_len());
    for (n, wn) in w.iter().enumerate() {
        for l in 0..dims.slots {
            let tx = wn * s.symbols[n].column(l);
            for i in 0..slot {
                let row = l * slot + i;
                let col0 = n * sig + l * slot * dims.tx + i * dims.tx;
                for t in 0..dims.tx {
                    x[(row, col0 + t)] = tx[t];
                }
            }
        }
    }
    Ok(x)
}

/// `X̄ v` without forming `X̄`.
pub fn apply_xbar(w: &[CMatrix], s: &SymbolFrame, v: &CVector, dims: &Dims) -> Result<CVector> {
    check_beamformers(w, s, dims)?;
    if v.len() != dims.stacked_len() {
        return Err(DfrcError::DimensionMismatch {
            what: "stacked signature",
            expected: dims.stacked_len(),
            found: v.len(),
        });
    }
    let slot = dims.slot_len();
    let sig = dims.signature_len();
    let mut y = CVector::zeros(dims.echo_len());
    for (n, wn) in w.iter().enumerate() {
        for l in 0..dims.slots {
            let tx = wn * s.symbols[n].column(l);
            for i in 0..slot {
                let start = n * sig + (l * slot + i) * dims.tx;
                let block = v.rows(start, dims.tx);
                y[l * slot + i] += tx.iter().zip(block.iter()).map(|(a, b)| a * b).sum::<C64>();
            }
        }
    }
    Ok(y)
}

/// Components of one simulated echo.
#[derive(Debug, Clone)]
pub struct EchoDraw {
    pub target: CVector,
    pub clutter: CVector,
    pub noise: CVector,
}

impl EchoDraw {
    pub fn total(&self) -> CVector {
        &self.target + &self.clutter + &self.noise
    }
}

/// Draws echoes `X̄ v_0 + Σ_m J̄_m X̄ Σ_r ξ_{m,r} u_{m,r} + z` for fixed
/// beamformers, with `ξ ~ CN(0, 1)` and `z ~ CN(0, σ_r^2 I)`.
///
/// The clutter term has covariance `Σ_m J̄_m X̄ M_m X̄^H J̄_m^H` for any factor
/// set; deterministic parts are precomputed once.
#[derive(Debug, Clone)]
pub struct EchoSimulator {
    target: CVector,
    clutter_columns: Vec<CVector>,
    noise_std: f64,
}

impl EchoSimulator {
    pub fn new(
        w: &[CMatrix],
        s: &SymbolFrame,
        target_signature: &CVector,
        factors: &[InnerCcmFactors],
        noise_radar: f64,
        dims: &Dims,
    ) -> Result<EchoSimulator> {
        let target = apply_xbar(w, s, target_signature, dims)?;
        let mut clutter_columns = Vec::new();
        for cell in factors {
            for u in &cell.factors {
                let echo = apply_xbar(w, s, u, dims)?;
                let as_mat = CMatrix::from_column_slice(echo.len(), 1, echo.as_slice());
                clutter_columns.push(
                    shift_rows(cell.offset, dims, &as_mat)
                        .column(0)
                        .into_owned(),
                );
            }
        }
        Ok(EchoSimulator {
            target,
            clutter_columns,
            noise_std: noise_radar.max(0.0).sqrt(),
        })
    }

    pub fn target_echo(&self) -> &CVector {
        &self.target
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> EchoDraw {
        let len = self.target.len();
        let mut clutter = CVector::zeros(len);
        for col in &self.clutter_columns {
            let xi = complex_normal(rng);
            clutter.axpy(xi, col, C64::new(1.0, 0.0));
        }
        let noise = CVector::from_fn(len, |_, _| complex_normal(rng) * self.noise_std);
        EchoDraw {
            target: self.target.clone(),
            clutter,
            noise,
        }
    }
}

/// One echo realization; see [`EchoSimulator`].
pub fn simulate_echoes<R: Rng + ?Sized>(
    w: &[CMatrix],
    s: &SymbolFrame,
    target_signature: &CVector,
    factors: &[InnerCcmFactors],
    noise_radar: f64,
    dims: &Dims,
    rng: &mut R,
) -> Result<CVector> {
    let sim = EchoSimulator::new(w, s, target_signature, factors, noise_radar, dims)?;
    Ok(sim.draw(rng).total())
}
