//! The pair encoder: span-pair representations over the n x n grid.
//!
//! Per layer, the grid is seeded by a ReLU MLP over `[S_i; S_j]`
//! concatenations, then contextualized by a two-dimensional GRU scanned from
//! one, two, or four corners, with hidden states concatenated channel-wise.
//! Each cell's GRU consumes the cell input and one combined context state: a
//! softmax-gated sum of the previous layer's cell, the row neighbor, and the
//! column neighbor (out-of-range neighbors are zero vectors).
//!
//! The recurrence exists in three equivalent forms that are tested against
//! each other:
//!   * the tape form (trainable, cell by cell on the autodiff graph),
//!   * a naive doubly-nested reference loop (the oracle),
//!   * a wavefront-scheduled form where anti-diagonal cells run in parallel.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{DirectionMode, ModelConfig};
use crate::params::{xavier, Bindings, ParamStore};
use crate::rng::SeedRng;
use crate::seq_encoder::MASK_BIAS;
use crate::tensor::{Graph, NodeId, Real, Result, Tensor};

/// Scan origin corner of one 2D-GRU sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanDir {
    /// From the top-left: cell (i,j) sees (i-1,j) and (i,j-1).
    DownRight,
    /// From the bottom-right: cell (i,j) sees (i+1,j) and (i,j+1).
    UpLeft,
    /// From the top-right: cell (i,j) sees (i-1,j) and (i,j+1).
    DownLeft,
    /// From the bottom-left: cell (i,j) sees (i+1,j) and (i,j-1).
    UpRight,
}

impl ScanDir {
    /// Scan order for a mode; bi shares its first scan with uni, quad its
    /// first two with bi, so lower modes are channel prefixes of higher ones.
    pub fn for_mode(mode: DirectionMode) -> &'static [ScanDir] {
        match mode {
            DirectionMode::Uni => &[ScanDir::DownRight],
            DirectionMode::Bi => &[ScanDir::DownRight, ScanDir::UpLeft],
            DirectionMode::Quad => {
                &[ScanDir::DownRight, ScanDir::UpLeft, ScanDir::DownLeft, ScanDir::UpRight]
            }
        }
    }

    /// Map (i, j) to scan coordinates (a, b) measured from the origin corner;
    /// dependencies are then always (a-1, b) and (a, b-1).
    fn to_scan(self, i: usize, j: usize, n: usize) -> (usize, usize) {
        match self {
            ScanDir::DownRight => (i, j),
            ScanDir::UpLeft => (n - 1 - i, n - 1 - j),
            ScanDir::DownLeft => (i, n - 1 - j),
            ScanDir::UpRight => (n - 1 - i, j),
        }
    }

    fn from_scan(self, a: usize, b: usize, n: usize) -> (usize, usize) {
        match self {
            ScanDir::DownRight => (a, b),
            ScanDir::UpLeft => (n - 1 - a, n - 1 - b),
            ScanDir::DownLeft => (a, n - 1 - b),
            ScanDir::UpRight => (n - 1 - a, b),
        }
    }

    /// Grid neighbors feeding cell (i, j): (row neighbor, column neighbor),
    /// `None` at the boundary.
    pub fn neighbors(self, i: usize, j: usize, n: usize) -> (Option<(usize, usize)>, Option<(usize, usize)>) {
        let (a, b) = self.to_scan(i, j, n);
        let row = (a > 0).then(|| self.from_scan(a - 1, b, n));
        let col = (b > 0).then(|| self.from_scan(a, b - 1, n));
        (row, col)
    }

    /// All cells in a dependency-respecting sequential order.
    pub fn scan_order(self, n: usize) -> Vec<(usize, usize)> {
        let mut cells = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                cells.push(self.from_scan(a, b, n));
            }
        }
        cells
    }
}

/// Execution plan: rounds of mutually independent cells. With one worker the
/// plan degenerates to the direction's sequential (row-major) order in a
/// single round; otherwise cells are grouped by anti-diagonal.
pub fn wavefront_schedule(n: usize, dir: ScanDir, workers: usize) -> Vec<Vec<(usize, usize)>> {
    assert!(n >= 1 && workers >= 1);
    if workers == 1 {
        return vec![dir.scan_order(n)];
    }
    let mut rounds: Vec<Vec<(usize, usize)>> = vec![Vec::new(); 2 * n - 1];
    for a in 0..n {
        for b in 0..n {
            rounds[a + b].push(dir.from_scan(a, b, n));
        }
    }
    rounds
}

// ── parameters ───────────────────────────────────────────────────────

fn dir_prefix(cfg: &ModelConfig, layer: usize, dir_idx: usize) -> String {
    if cfg.share_direction_weights {
        format!("pair.l{layer}.dir0")
    } else {
        format!("pair.l{layer}.dir{dir_idx}")
    }
}

pub fn init_params(cfg: &ModelConfig, store: &mut ParamStore, seed: &SeedRng) {
    if !cfg.use_pair_encoder {
        return;
    }
    let d = cfg.hidden_dim;
    let dp = cfg.pair_input_dim();
    let h = cfg.pair_hidden;
    let dirs = if cfg.share_direction_weights { 1 } else { cfg.directions.scan_count() };
    for l in 0..cfg.n_layers {
        let w1 = format!("pair.l{l}.init.w1");
        store.insert(&w1, xavier(2 * d, dp, &mut seed.split(&w1)));
        store.insert(&format!("pair.l{l}.init.b1"), crate::params::zeros_row(dp));
        let w2 = format!("pair.l{l}.init.w2");
        store.insert(&w2, xavier(dp, dp, &mut seed.split(&w2)));
        store.insert(&format!("pair.l{l}.init.b2"), crate::params::zeros_row(dp));
        for k in 0..dirs {
            let p = format!("pair.l{l}.dir{k}");
            for gate in ["wz", "wr", "wh"] {
                let name = format!("{p}.{gate}");
                store.insert(&name, xavier(dp, h, &mut seed.split(&name)));
            }
            for gate in ["uz", "ur", "uh"] {
                let name = format!("{p}.{gate}");
                store.insert(&name, xavier(h, h, &mut seed.split(&name)));
            }
            for gate in ["bz", "br", "bh"] {
                store.insert(&format!("{p}.{gate}"), crate::params::zeros_row(h));
            }
            for u in 0..3 {
                let name = format!("{p}.gate.u{u}");
                store.insert(&name, xavier(h, 1, &mut seed.split(&name)));
            }
            store.insert(&format!("{p}.gate.b"), crate::params::zeros_row(3));
        }
        if cfg.use_interaction {
            let name = format!("interact.l{l}.w");
            store.insert(&name, xavier(cfg.pair_channels(), d, &mut seed.split(&name)));
        }
    }
}

// ── pair initialization (MLP over [S_i; S_j]) ────────────────────────

/// `S'_{i,j} = ReLU(MLP([S_i; S_j]))` for all (i, j), as an `[n^2 x d_pair]`
/// matrix in row-major cell order.
pub fn pair_init(
    g: &mut Graph,
    binds: &Bindings,
    layer: usize,
    s: NodeId,
) -> Result<NodeId> {
    let n = g.value(s).shape()[0];
    let rows_i: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat(i).take(n)).collect();
    let rows_j: Vec<usize> = (0..n).flat_map(|_| 0..n).collect();
    let si = g.gather_rows(s, &rows_i)?;
    let sj = g.gather_rows(s, &rows_j)?;
    let cat = g.concat(&[si, sj], 1)?;
    let inner = g.matmul(cat, binds.get(&format!("pair.l{layer}.init.w1")))?;
    let inner = g.add_bias(inner, binds.get(&format!("pair.l{layer}.init.b1")))?;
    let inner = g.relu(inner);
    let out = g.matmul(inner, binds.get(&format!("pair.l{layer}.init.w2")))?;
    let out = g.add_bias(out, binds.get(&format!("pair.l{layer}.init.b2")))?;
    Ok(g.relu(out))
}

// ── the GRU cell, tape form ──────────────────────────────────────────

struct DirBinds {
    wz: NodeId,
    uz: NodeId,
    bz: NodeId,
    wr: NodeId,
    ur: NodeId,
    br: NodeId,
    wh: NodeId,
    uh: NodeId,
    bh: NodeId,
    gate_u: [NodeId; 3],
    gate_b: NodeId,
}

impl DirBinds {
    fn new(binds: &Bindings, prefix: &str) -> Self {
        DirBinds {
            wz: binds.get(&format!("{prefix}.wz")),
            uz: binds.get(&format!("{prefix}.uz")),
            bz: binds.get(&format!("{prefix}.bz")),
            wr: binds.get(&format!("{prefix}.wr")),
            ur: binds.get(&format!("{prefix}.ur")),
            br: binds.get(&format!("{prefix}.br")),
            wh: binds.get(&format!("{prefix}.wh")),
            uh: binds.get(&format!("{prefix}.uh")),
            bh: binds.get(&format!("{prefix}.bh")),
            gate_u: [
                binds.get(&format!("{prefix}.gate.u0")),
                binds.get(&format!("{prefix}.gate.u1")),
                binds.get(&format!("{prefix}.gate.u2")),
            ],
            gate_b: binds.get(&format!("{prefix}.gate.b")),
        }
    }
}

/// One GRU step on the tape: softmax-gated context sum, then a standard cell.
fn gru_cell_tape(
    g: &mut Graph,
    w: &DirBinds,
    s_row: NodeId,
    c_prev: NodeId,
    c_row: NodeId,
    c_col: NodeId,
) -> Result<NodeId> {
    let g0 = g.matmul(c_prev, w.gate_u[0])?;
    let g1 = g.matmul(c_row, w.gate_u[1])?;
    let g2 = g.matmul(c_col, w.gate_u[2])?;
    let gates = g.concat(&[g0, g1, g2], 1)?;
    let gates = g.add(gates, w.gate_b)?;
    let alpha = g.softmax(gates, 1)?;
    let a0 = g.slice_cols(alpha, 0, 1)?;
    let a1 = g.slice_cols(alpha, 1, 1)?;
    let a2 = g.slice_cols(alpha, 2, 1)?;
    let t0 = g.scale_by(c_prev, a0)?;
    let t1 = g.scale_by(c_row, a1)?;
    let t2 = g.scale_by(c_col, a2)?;
    let ctx = g.add(t0, t1)?;
    let ctx = g.add(ctx, t2)?;

    let sz = g.matmul(s_row, w.wz)?;
    let cz = g.matmul(ctx, w.uz)?;
    let z = g.add(sz, cz)?;
    let z = g.add(z, w.bz)?;
    let z = g.sigmoid(z);

    let sr = g.matmul(s_row, w.wr)?;
    let cr = g.matmul(ctx, w.ur)?;
    let r = g.add(sr, cr)?;
    let r = g.add(r, w.br)?;
    let r = g.sigmoid(r);

    let rc = g.mul(r, ctx)?;
    let sh = g.matmul(s_row, w.wh)?;
    let ch = g.matmul(rc, w.uh)?;
    let cand = g.add(sh, ch)?;
    let cand = g.add(cand, w.bh)?;
    let cand = g.tanh(cand);

    let keep = g.affine(z, -1.0, 1.0); // 1 - z
    let kept = g.mul(keep, ctx)?;
    let new = g.mul(z, cand)?;
    g.add(kept, new)
}

/// One directional sweep on the tape. `prev` is the previous layer's grid
/// slice for the same direction (`[n^2 x h]`), absent at layer 0. Cells on a
/// masked row or column are forced to the zero state.
#[allow(clippy::too_many_arguments)]
pub fn mdgru_sweep_tape(
    g: &mut Graph,
    binds: &Bindings,
    cfg: &ModelConfig,
    layer: usize,
    dir_idx: usize,
    dir: ScanDir,
    s_prime: NodeId,
    prev: Option<NodeId>,
    n: usize,
    mask: &[bool],
) -> Result<NodeId> {
    let h = cfg.pair_hidden;
    let w = DirBinds::new(binds, &dir_prefix(cfg, layer, dir_idx));
    let zero = g.constant(Tensor::row(vec![0.0; h]));
    let mut cells: Vec<NodeId> = vec![zero; n * n];
    for (i, j) in dir.scan_order(n) {
        if !mask[i] || !mask[j] {
            continue; // stays the zero state
        }
        let idx = i * n + j;
        let s_row = g.gather_rows(s_prime, &[idx])?;
        let c_prev = match prev {
            Some(p) => g.gather_rows(p, &[idx])?,
            None => zero,
        };
        let (row_nb, col_nb) = dir.neighbors(i, j, n);
        let c_row = row_nb.map_or(zero, |(ri, rj)| cells[ri * n + rj]);
        let c_col = col_nb.map_or(zero, |(ci, cj)| cells[ci * n + cj]);
        cells[idx] = gru_cell_tape(g, &w, s_row, c_prev, c_row, c_col)?;
    }
    g.concat(&cells, 0)
}

/// All sweeps of the configured mode, channels concatenated:
/// `[n^2 x h*scans]`. `prev_grid` is the previous layer's full grid.
#[allow(clippy::too_many_arguments)]
pub fn mdgru_multi_tape(
    g: &mut Graph,
    binds: &Bindings,
    cfg: &ModelConfig,
    layer: usize,
    s_prime: NodeId,
    prev_grid: Option<NodeId>,
    n: usize,
    mask: &[bool],
) -> Result<NodeId> {
    let h = cfg.pair_hidden;
    let dirs = ScanDir::for_mode(cfg.directions);
    let mut outs = Vec::with_capacity(dirs.len());
    for (k, &dir) in dirs.iter().enumerate() {
        let prev = match prev_grid {
            Some(p) => Some(g.slice_cols(p, k * h, h)?),
            None => None,
        };
        outs.push(mdgru_sweep_tape(g, binds, cfg, layer, k, dir, s_prime, prev, n, mask)?);
    }
    g.concat(&outs, 1)
}

// ── the GRU cell, raw form (inference / bench / oracle) ──────────────

/// Weights of one directional GRU, extracted flat. The arithmetic mirrors the
/// tape cell operation for operation, so both paths agree bitwise.
#[derive(Debug, Clone)]
pub struct GruDirWeights {
    pub d_in: usize,
    pub h: usize,
    pub wz: Vec<Real>,
    pub uz: Vec<Real>,
    pub bz: Vec<Real>,
    pub wr: Vec<Real>,
    pub ur: Vec<Real>,
    pub br: Vec<Real>,
    pub wh: Vec<Real>,
    pub uh: Vec<Real>,
    pub bh: Vec<Real>,
    pub gate_u: [Vec<Real>; 3],
    pub gate_b: [Real; 3],
}

impl GruDirWeights {
    pub fn from_store(store: &ParamStore, cfg: &ModelConfig, layer: usize, dir_idx: usize) -> Self {
        let p = dir_prefix(cfg, layer, dir_idx);
        let take = |suffix: &str| store.value(&format!("{p}.{suffix}")).data().to_vec();
        let gb = take("gate.b");
        GruDirWeights {
            d_in: cfg.pair_input_dim(),
            h: cfg.pair_hidden,
            wz: take("wz"),
            uz: take("uz"),
            bz: take("bz"),
            wr: take("wr"),
            ur: take("ur"),
            br: take("br"),
            wh: take("wh"),
            uh: take("uh"),
            bh: take("bh"),
            gate_u: [take("gate.u0"), take("gate.u1"), take("gate.u2")],
            gate_b: [gb[0], gb[1], gb[2]],
        }
    }

    pub fn random(d_in: usize, h: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut mat = |r: usize, c: usize| {
            let bound = (6.0 / (r + c) as Real).sqrt();
            (0..r * c).map(|_| rng.gen_range(-bound..bound)).collect::<Vec<Real>>()
        };
        GruDirWeights {
            d_in,
            h,
            wz: mat(d_in, h),
            uz: mat(h, h),
            bz: mat(1, h),
            wr: mat(d_in, h),
            ur: mat(h, h),
            br: mat(1, h),
            wh: mat(d_in, h),
            uh: mat(h, h),
            bh: mat(1, h),
            gate_u: [mat(h, 1), mat(h, 1), mat(h, 1)],
            gate_b: [0.0; 3],
        }
    }

    /// Zero biases, all weights zero: the fixed point at zero.
    pub fn zeros(d_in: usize, h: usize) -> Self {
        GruDirWeights {
            d_in,
            h,
            wz: vec![0.0; d_in * h],
            uz: vec![0.0; h * h],
            bz: vec![0.0; h],
            wr: vec![0.0; d_in * h],
            ur: vec![0.0; h * h],
            br: vec![0.0; h],
            wh: vec![0.0; d_in * h],
            uh: vec![0.0; h * h],
            bh: vec![0.0; h],
            gate_u: [vec![0.0; h], vec![0.0; h], vec![0.0; h]],
            gate_b: [0.0; 3],
        }
    }
}

fn gru_cell_raw(
    w: &GruDirWeights,
    s_row: &[Real],
    c_prev: &[Real],
    c_row: &[Real],
    c_col: &[Real],
) -> Vec<Real> {
    use crate::tensor::{matmul_raw, sigmoid_raw, softmax_lanes};
    let h = w.h;
    let contexts = [c_prev, c_row, c_col];

    let mut gates = [0.0; 3];
    for k in 0..3 {
        let dot = matmul_raw(contexts[k], &w.gate_u[k], 1, h, 1);
        gates[k] = dot[0] + w.gate_b[k];
    }
    softmax_lanes(&mut gates, 3);

    let mut ctx = vec![0.0; h];
    for j in 0..h {
        ctx[j] = (gates[0] * c_prev[j] + gates[1] * c_row[j]) + gates[2] * c_col[j];
    }

    let step = |wx: &[Real], ux: &[Real], bx: &[Real], xin: &[Real]| -> Vec<Real> {
        let sw = matmul_raw(s_row, wx, 1, w.d_in, h);
        let cu = matmul_raw(xin, ux, 1, h, h);
        (0..h).map(|j| (sw[j] + cu[j]) + bx[j]).collect()
    };

    let z: Vec<Real> = step(&w.wz, &w.uz, &w.bz, &ctx).iter().map(|&v| sigmoid_raw(v)).collect();
    let r: Vec<Real> = step(&w.wr, &w.ur, &w.br, &ctx).iter().map(|&v| sigmoid_raw(v)).collect();
    let rc: Vec<Real> = r.iter().zip(&ctx).map(|(rv, cv)| rv * cv).collect();
    let cand: Vec<Real> = step(&w.wh, &w.uh, &w.bh, &rc).iter().map(|&v| v.tanh()).collect();

    // written as z * -1 + 1 to mirror the tape's affine op bit for bit
    #[allow(clippy::neg_multiply)]
    (0..h).map(|j| (z[j] * -1.0 + 1.0) * ctx[j] + z[j] * cand[j]).collect()
}

fn cell_inputs<'a>(
    w: &GruDirWeights,
    s_prime: &'a [Real],
    prev: Option<&'a [Real]>,
    grid: &'a [Real],
    zero: &'a [Real],
    n: usize,
    dir: ScanDir,
    i: usize,
    j: usize,
) -> (&'a [Real], &'a [Real], &'a [Real], &'a [Real]) {
    let idx = i * n + j;
    let s_row = &s_prime[idx * w.d_in..(idx + 1) * w.d_in];
    let c_prev = prev.map_or(zero, |p| &p[idx * w.h..(idx + 1) * w.h]);
    let (row_nb, col_nb) = dir.neighbors(i, j, n);
    let c_row = row_nb.map_or(zero, |(ri, rj)| {
        let k = ri * n + rj;
        &grid[k * w.h..(k + 1) * w.h]
    });
    let c_col = col_nb.map_or(zero, |(ci, cj)| {
        let k = ci * n + cj;
        &grid[k * w.h..(k + 1) * w.h]
    });
    (s_row, c_prev, c_row, c_col)
}

fn masked_off(mask: Option<&[bool]>, i: usize, j: usize) -> bool {
    mask.map_or(false, |m| !m[i] || !m[j])
}

/// Reference evaluation: plain nested loops in the direction's sequential
/// order. This is the oracle the scheduled form is checked against.
pub fn mdgru_naive(
    w: &GruDirWeights,
    s_prime: &[Real],
    prev: Option<&[Real]>,
    n: usize,
    dir: ScanDir,
    mask: Option<&[bool]>,
) -> Vec<Real> {
    let zero = vec![0.0; w.h];
    let mut grid = vec![0.0; n * n * w.h];
    for (i, j) in dir.scan_order(n) {
        if masked_off(mask, i, j) {
            continue;
        }
        let out = {
            let (s_row, c_prev, c_row, c_col) =
                cell_inputs(w, s_prime, prev, &grid, &zero, n, dir, i, j);
            gru_cell_raw(w, s_row, c_prev, c_row, c_col)
        };
        let idx = i * n + j;
        grid[idx * w.h..(idx + 1) * w.h].copy_from_slice(&out);
    }
    grid
}

/// Wavefront evaluation: cells within one round are independent and run in
/// parallel on `workers` threads; rounds are barriers. Cell outputs do not
/// depend on scheduling, so results are identical to [`mdgru_naive`] bit for
/// bit for any worker count.
#[allow(clippy::too_many_arguments)]
pub fn mdgru_wavefront(
    w: &GruDirWeights,
    s_prime: &[Real],
    prev: Option<&[Real]>,
    n: usize,
    dir: ScanDir,
    mask: Option<&[bool]>,
    workers: usize,
) -> Vec<Real> {
    let plan = wavefront_schedule(n, dir, workers);
    let zero = vec![0.0; w.h];
    let mut grid = vec![0.0; n * n * w.h];

    if workers == 1 {
        // Sequential plan: one round in scan order, cells written as computed.
        for &(i, j) in &plan[0] {
            if masked_off(mask, i, j) {
                continue;
            }
            let out = {
                let (s_row, c_prev, c_row, c_col) =
                    cell_inputs(w, s_prime, prev, &grid, &zero, n, dir, i, j);
                gru_cell_raw(w, s_row, c_prev, c_row, c_col)
            };
            let idx = i * n + j;
            grid[idx * w.h..(idx + 1) * w.h].copy_from_slice(&out);
        }
        return grid;
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("worker pool");
    for round in &plan {
        // Cells within a round are mutually independent: read the grid
        // filled by earlier rounds, write the whole round afterwards.
        let compute = |&(i, j): &(usize, usize)| -> Option<Vec<Real>> {
            if masked_off(mask, i, j) {
                return None;
            }
            let (s_row, c_prev, c_row, c_col) =
                cell_inputs(w, s_prime, prev, &grid, &zero, n, dir, i, j);
            Some(gru_cell_raw(w, s_row, c_prev, c_row, c_col))
        };
        let outputs: Vec<Option<Vec<Real>>> = pool.install(|| round.par_iter().map(compute).collect());
        for ((i, j), out) in round.iter().zip(outputs) {
            if let Some(out) = out {
                let idx = i * n + j;
                grid[idx * w.h..(idx + 1) * w.h].copy_from_slice(&out);
            }
        }
    }
    grid
}

// ── interaction (pair -> sequence feedback) ──────────────────────────

/// Row-wise pooled pair summary added back onto the sequence state:
/// `g_i = max over j >= i (unmasked) of P_{i,j} W`, output `S + g`. With a
/// zero grid the result is exactly `S`.
#[allow(clippy::too_many_arguments)]
pub fn interaction(
    g: &mut Graph,
    binds: &Bindings,
    cfg: &ModelConfig,
    layer: usize,
    p_grid: NodeId,
    s: NodeId,
    n: usize,
    mask: &[bool],
) -> Result<NodeId> {
    let d = cfg.hidden_dim;
    let mapped = g.matmul(p_grid, binds.get(&format!("interact.l{layer}.w")))?;
    // push lower-triangle and masked-column cells out of the max
    let mut bias = vec![0.0; n * n * d];
    for i in 0..n {
        for j in 0..n {
            if j < i || !mask[j] {
                let idx = i * n + j;
                bias[idx * d..(idx + 1) * d].iter_mut().for_each(|v| *v = MASK_BIAS);
            }
        }
    }
    let bias = g.constant(Tensor::matrix(n * n, d, bias));
    let gated = g.add(mapped, bias)?;
    let pooled = g.max_pool_rows(gated, n)?;
    // A fully-masked row's pool is all mask bias; zero it so pad rows carry
    // ordinary magnitudes into the next layer instead of -1e30.
    let mut row_mask = vec![1.0; n * d];
    for (i, &keep) in mask.iter().enumerate() {
        if !keep {
            row_mask[i * d..(i + 1) * d].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let row_mask = g.constant(Tensor::matrix(n, d, row_mask));
    let pooled = g.mul(pooled, row_mask)?;
    g.add(s, pooled)
}
