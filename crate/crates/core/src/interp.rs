//! Tricubic interpolation at off-grid points, serial and under a virtual
//! pencil partition.
//!
//! The partitioned path mirrors the distributed interpolation algorithm with
//! in-process virtual tasks: the grid is split into `p1 x p2` pencil slabs
//! (axes 1 and 2 partitioned, axis 3 whole). Each scalar interpolation pass
//! runs four phases:
//!
//! 1. ghost sync: every task fills a 3-cell halo on its four partitioned
//!    faces from neighbor messages (corners ride along via a two-stage
//!    exchange), plus a local periodic wrap along axis 3;
//! 2. scatter: each off-grid point is routed to the task whose slab contains
//!    it (`owner`), recorded once in the [`InterpolationPlan`];
//! 3. local interpolation on the owner's padded block;
//! 4. gather: results return to the requesting task (`worker`) and are
//!    emitted in the original point order.
//!
//! The local kernel is tensor-product cubic Lagrange on the 4^3 neighborhood
//! of the containing cell. Both the serial and the partitioned path evaluate
//! the same kernel over the same 64 values in the same order, so results are
//! bitwise identical for any task count.

use std::sync::Arc;

use crate::counters::OpCounters;
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, TWO_PI};

/// Halo width on partitioned faces. A point owned by a slab needs at most
/// one node left and two nodes right of its containing cell.
pub const GHOST_WIDTH: usize = 3;

/// Cubic Lagrange weights on uniformly spaced nodes {-1, 0, 1, 2} at
/// fractional position `t` in [0, 1]. Exactly [0, 1, 0, 0] at t = 0.
#[inline]
fn lagrange_weights(t: f64) -> [f64; 4] {
    let tp = t + 1.0;
    let tm = t - 1.0;
    let t2 = t - 2.0;
    [
        -t * tm * t2 / 6.0,
        tp * tm * t2 / 2.0,
        -tp * t * t2 / 2.0,
        tp * t * tm / 6.0,
    ]
}

/// Fixed-order tensor-product accumulation over the 4x4x4 stencil. Every
/// interpolation path funnels through this one routine so the floating-point
/// operation sequence is identical everywhere.
#[inline]
fn kernel_sum(
    wx: &[f64; 4],
    wy: &[f64; 4],
    wz: &[f64; 4],
    mut fetch: impl FnMut(usize, usize, usize) -> f64,
) -> f64 {
    let mut acc = 0.0;
    for c in 0..4 {
        let mut acc_c = 0.0;
        for b in 0..4 {
            let mut acc_b = 0.0;
            for a in 0..4 {
                acc_b += wx[a] * fetch(a, b, c);
            }
            acc_c += wy[b] * acc_b;
        }
        acc += wz[c] * acc_c;
    }
    acc
}

/// Containing cell and fractional offset of coordinate `x` on an axis with
/// `n` cells. Fractions within a few ulps of a node snap to it, so
/// interpolation at grid nodes reproduces nodal values bitwise and cell
/// ownership of boundary points follows the half-open convention exactly.
#[inline]
fn locate(x: f64, n: usize, inv_h: f64) -> (usize, f64) {
    let s = x * inv_h;
    let c = s.floor();
    let mut t = s - c; // exact: c <= s < c + 1
    let mut cell = c as isize;
    let snap = (c.abs() + 1.0) * 1e-14;
    if t <= snap {
        t = 0.0;
    } else if 1.0 - t <= snap {
        cell += 1;
        t = 0.0;
    }
    let n = n as isize;
    // s in [0, N] after periodic wrapping; fold the s ~ N case to node 0
    if cell >= n {
        cell -= n;
    } else if cell < 0 {
        cell += n;
    }
    (cell as usize, t)
}

#[inline]
fn wrap_coord(x: f64) -> f64 {
    if (0.0..TWO_PI).contains(&x) {
        x
    } else {
        let w = x.rem_euclid(TWO_PI);
        if w >= TWO_PI {
            0.0
        } else {
            w
        }
    }
}

/// Tricubic interpolation of `field` at `points`, serial reference path.
/// Positions outside `[0, 2*pi)^3` wrap periodically; a point that
/// coincides with a grid node returns the nodal value exactly.
pub fn tricubic_local(field: &ScalarField, points: &[[f64; 3]]) -> Result<Vec<f64>> {
    let grid = field.grid();
    let [n1, n2, n3] = grid.dims();
    let h = grid.spacing();
    let inv_h = [1.0 / h[0], 1.0 / h[1], 1.0 / h[2]];
    let vals = field.values();
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        if !p.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFiniteInput { context: "interpolation point" });
        }
        let (c1, t1) = locate(wrap_coord(p[0]), n1, inv_h[0]);
        let (c2, t2) = locate(wrap_coord(p[1]), n2, inv_h[1]);
        let (c3, t3) = locate(wrap_coord(p[2]), n3, inv_h[2]);
        let wx = lagrange_weights(t1);
        let wy = lagrange_weights(t2);
        let wz = lagrange_weights(t3);
        // periodic stencil indices per axis
        let ix = stencil_indices(c1, n1);
        let iy = stencil_indices(c2, n2);
        let iz = stencil_indices(c3, n3);
        out.push(kernel_sum(&wx, &wy, &wz, |a, b, c| {
            vals[ix[a] + n1 * (iy[b] + n2 * iz[c])]
        }));
    }
    Ok(out)
}

#[inline]
fn stencil_indices(cell: usize, n: usize) -> [usize; 4] {
    let wrap = |i: isize| -> usize {
        let n = n as isize;
        (((i % n) + n) % n) as usize
    };
    let c = cell as isize;
    [wrap(c - 1), wrap(c), wrap(c + 1), wrap(c + 2)]
}

/// Virtual task decomposition of the grid: `p1 x p2` contiguous slabs over
/// axes 1 and 2, axis 3 undivided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PencilPartition {
    grid: Grid,
    p1: usize,
    p2: usize,
}

/// Half-open node-index ranges of one task's slab.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slab {
    pub lo1: usize,
    pub hi1: usize,
    pub lo2: usize,
    pub hi2: usize,
}

impl PencilPartition {
    /// `p1` must divide `N1` and `p2` must divide `N2`; slab widths must be
    /// at least [`GHOST_WIDTH`] so each halo is sourced from the adjacent
    /// task alone.
    pub fn new(grid: Grid, p1: usize, p2: usize) -> Result<Self> {
        let [n1, n2, _] = grid.dims();
        let valid = p1 >= 1
            && p2 >= 1
            && n1 % p1 == 0
            && n2 % p2 == 0
            && (p1 == 1 || n1 / p1 >= GHOST_WIDTH)
            && (p2 == 1 || n2 / p2 >= GHOST_WIDTH);
        if !valid {
            return Err(Error::InvalidPartition { p1, p2, n1, n2 });
        }
        Ok(Self { grid, p1, p2 })
    }

    pub fn serial(grid: Grid) -> Self {
        Self { grid, p1: 1, p2: 1 }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn task_count(&self) -> usize {
        self.p1 * self.p2
    }

    pub fn factors(&self) -> (usize, usize) {
        (self.p1, self.p2)
    }

    pub fn slab(&self, task: usize) -> Slab {
        let [n1, n2, _] = self.grid.dims();
        let w1 = n1 / self.p1;
        let w2 = n2 / self.p2;
        let t1 = task % self.p1;
        let t2 = task / self.p1;
        Slab { lo1: t1 * w1, hi1: (t1 + 1) * w1, lo2: t2 * w2, hi2: (t2 + 1) * w2 }
    }

    /// Task owning the grid cell `(c1, c2)`; unique by the half-open slab
    /// ranges.
    #[inline]
    pub fn owner_of_cell(&self, c1: usize, c2: usize) -> usize {
        let [n1, n2, _] = self.grid.dims();
        let w1 = n1 / self.p1;
        let w2 = n2 / self.p2;
        (c1 / w1) + self.p1 * (c2 / w2)
    }

    fn neighbor(&self, task: usize, axis: usize, step: isize) -> usize {
        let t1 = (task % self.p1) as isize;
        let t2 = (task / self.p1) as isize;
        let (p1, p2) = (self.p1 as isize, self.p2 as isize);
        match axis {
            1 => ((t1 + step).rem_euclid(p1) + t2 * p1) as usize,
            2 => (t1 + (t2 + step).rem_euclid(p2) * p1) as usize,
            _ => unreachable!(),
        }
    }
}

/// One point in an owner's work list: global containing cell plus
/// fractional offsets.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PlannedPoint {
    cell: [u32; 3],
    frac: [f64; 3],
}

/// Owner/worker routing of a point set under a partition, built once per
/// point set and reused for every field interpolated at those points.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationPlan {
    partition: PencilPartition,
    n_points: usize,
    work_lists: Vec<Vec<PlannedPoint>>,
    /// per input point: (owner task, slot in the owner's work list)
    routing: Vec<(u32, u32)>,
    /// send-list sizes, `sends[worker][owner]`, for accounting and tests
    sends: Vec<Vec<usize>>,
}

impl InterpolationPlan {
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn partition(&self) -> &PencilPartition {
        &self.partition
    }

    /// Number of points that had to be sent away from their worker task.
    pub fn remote_point_count(&self) -> usize {
        let mut n = 0;
        for (w, row) in self.sends.iter().enumerate() {
            for (o, &c) in row.iter().enumerate() {
                if w != o {
                    n += c;
                }
            }
        }
        n
    }

    pub fn send_counts(&self) -> &[Vec<usize>] {
        &self.sends
    }

    pub fn owner_of_point(&self, i: usize) -> usize {
        self.routing[i].0 as usize
    }
}

/// The partition harness: builds plans and runs partitioned interpolation
/// passes, counting each scalar pass.
pub struct Interpolator {
    partition: PencilPartition,
    counters: Arc<OpCounters>,
}

impl Interpolator {
    pub fn new(partition: PencilPartition, counters: Arc<OpCounters>) -> Self {
        Self { partition, counters }
    }

    pub fn partition(&self) -> &PencilPartition {
        &self.partition
    }

    pub fn grid(&self) -> Grid {
        self.partition.grid
    }

    /// Classifies every point by owner slab and records the return route.
    /// When the point list is grid-ordered (one point per grid node), the
    /// worker of a point is the task owning its grid node; shorter lists are
    /// attributed to task 0. Deterministic and idempotent.
    pub fn build_plan(&self, points: &[[f64; 3]]) -> Result<InterpolationPlan> {
        self.counters.add_plan_build();
        let grid = self.partition.grid;
        let [n1, n2, n3] = grid.dims();
        let h = grid.spacing();
        let inv_h = [1.0 / h[0], 1.0 / h[1], 1.0 / h[2]];
        let p = self.partition.task_count();
        let grid_ordered = points.len() == grid.len();

        let mut work_lists: Vec<Vec<PlannedPoint>> = vec![Vec::new(); p];
        let mut routing = Vec::with_capacity(points.len());
        let mut sends = vec![vec![0usize; p]; p];
        for (i, pt) in points.iter().enumerate() {
            if !pt.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFiniteInput { context: "departure point" });
            }
            let (c1, t1) = locate(wrap_coord(pt[0]), n1, inv_h[0]);
            let (c2, t2) = locate(wrap_coord(pt[1]), n2, inv_h[1]);
            let (c3, t3) = locate(wrap_coord(pt[2]), n3, inv_h[2]);
            let owner = self.partition.owner_of_cell(c1, c2);
            let worker = if grid_ordered {
                let i1 = i % n1;
                let i2 = (i / n1) % n2;
                self.partition.owner_of_cell(i1.min(n1 - 1), i2.min(n2 - 1))
            } else {
                0
            };
            sends[worker][owner] += 1;
            let slot = work_lists[owner].len() as u32;
            work_lists[owner].push(PlannedPoint {
                cell: [c1 as u32, c2 as u32, c3 as u32],
                frac: [t1, t2, t3],
            });
            routing.push((owner as u32, slot));
        }
        Ok(InterpolationPlan {
            partition: self.partition,
            n_points: points.len(),
            work_lists,
            routing,
            sends,
        })
    }

    /// One partitioned interpolation pass of a scalar field over a planned
    /// point set: ghost sync, local interpolation on each owner, gather back
    /// to input order. Bitwise identical to [`tricubic_local`] on the
    /// unpartitioned field.
    pub fn apply(&self, field: &ScalarField, plan: &InterpolationPlan) -> Result<Vec<f64>> {
        if plan.partition != self.partition {
            return Err(Error::InvalidPartition {
                p1: self.partition.p1,
                p2: self.partition.p2,
                n1: plan.partition.p1,
                n2: plan.partition.p2,
            });
        }
        if field.grid() != self.partition.grid {
            return Err(Error::GridMismatch {
                left: field.grid().dims(),
                right: self.partition.grid.dims(),
            });
        }
        self.counters.add_interp(1);

        let blocks = self.distribute_with_ghosts(field);
        let p = self.partition.task_count();
        let mut task_results: Vec<Vec<f64>> = Vec::with_capacity(p);
        for (task, work) in plan.work_lists.iter().enumerate() {
            task_results.push(blocks[task].interpolate(work));
        }
        let mut out = vec![0.0; plan.n_points];
        for (i, &(owner, slot)) in plan.routing.iter().enumerate() {
            out[i] = task_results[owner as usize][slot as usize];
        }
        Ok(out)
    }

    /// Scatter the field into per-task blocks and run the ghost exchange:
    /// axis-1 halos from axis-1 neighbors' interiors, then axis-2 halos from
    /// axis-2 neighbors' current rows (delivering corner data), then the
    /// local periodic wrap along axis 3.
    fn distribute_with_ghosts(&self, field: &ScalarField) -> Vec<PaddedBlock> {
        let p = self.partition.task_count();
        let mut blocks: Vec<PaddedBlock> =
            (0..p).map(|r| PaddedBlock::interior(field, self.partition.slab(r))).collect();

        let g = GHOST_WIDTH;
        // phase 1: axis-1 halos
        let mut mailbox: Vec<(usize, bool, Vec<f64>)> = Vec::new();
        for r in 0..p {
            let left = self.partition.neighbor(r, 1, -1);
            let right = self.partition.neighbor(r, 1, 1);
            // r's data for right neighbor's left halo, and vice versa
            mailbox.push((right, true, blocks[r].pack_x(blocks[r].n1l - g, g)));
            mailbox.push((left, false, blocks[r].pack_x(0, g)));
        }
        for (dst, is_left_halo, data) in mailbox.drain(..) {
            blocks[dst].unpack_x(is_left_halo, &data);
        }
        // phase 2: axis-2 halos over the full padded axis-1 extent
        for r in 0..p {
            let down = self.partition.neighbor(r, 2, -1);
            let up = self.partition.neighbor(r, 2, 1);
            mailbox.push((up, true, blocks[r].pack_y(blocks[r].n2l - g, g)));
            mailbox.push((down, false, blocks[r].pack_y(0, g)));
        }
        for (dst, is_low_halo, data) in mailbox.drain(..) {
            blocks[dst].unpack_y(is_low_halo, &data);
        }
        // phase 3: periodic wrap along the undivided axis
        for b in &mut blocks {
            b.wrap_z();
        }
        blocks
    }
}

/// One task's field block with a 3-cell pad on every face. Axes 1 and 2 pads
/// come from the ghost exchange; axis 3 pads are the local periodic wrap.
struct PaddedBlock {
    lo1: usize,
    lo2: usize,
    n1l: usize,
    n2l: usize,
    n3: usize,
    vals: Vec<f64>,
}

impl PaddedBlock {
    fn interior(field: &ScalarField, slab: Slab) -> Self {
        let [n1, n2, n3] = field.grid().dims();
        let n1l = slab.hi1 - slab.lo1;
        let n2l = slab.hi2 - slab.lo2;
        let g = GHOST_WIDTH;
        let mut block = Self {
            lo1: slab.lo1,
            lo2: slab.lo2,
            n1l,
            n2l,
            n3,
            vals: vec![0.0; (n1l + 2 * g) * (n2l + 2 * g) * (n3 + 2 * g)],
        };
        let src = field.values();
        for i3 in 0..n3 {
            for i2 in 0..n2l {
                let s = slab.lo1 + n1 * (slab.lo2 + i2 + n2 * i3);
                let d = block.idx(g, i2 + g, i3 + g);
                block.vals[d..d + n1l].copy_from_slice(&src[s..s + n1l]);
            }
        }
        block
    }

    #[inline]
    fn idx(&self, p1: usize, p2: usize, p3: usize) -> usize {
        let g2 = 2 * GHOST_WIDTH;
        p1 + (self.n1l + g2) * (p2 + (self.n2l + g2) * p3)
    }

    /// Pack `width` interior columns starting at local x-index `x0`
    /// (interior rows and planes only).
    fn pack_x(&self, x0: usize, width: usize) -> Vec<f64> {
        let g = GHOST_WIDTH;
        let mut data = Vec::with_capacity(width * self.n2l * self.n3);
        for i3 in 0..self.n3 {
            for i2 in 0..self.n2l {
                for dx in 0..width {
                    data.push(self.vals[self.idx(g + x0 + dx, g + i2, g + i3)]);
                }
            }
        }
        data
    }

    fn unpack_x(&mut self, low_halo: bool, data: &[f64]) {
        let g = GHOST_WIDTH;
        let x_base = if low_halo { 0 } else { g + self.n1l };
        let mut it = data.iter();
        for i3 in 0..self.n3 {
            for i2 in 0..self.n2l {
                for dx in 0..g {
                    let d = self.idx(x_base + dx, g + i2, g + i3);
                    self.vals[d] = *it.next().expect("message length");
                }
            }
        }
    }

    /// Pack `width` rows starting at local y-index `y0`, spanning the full
    /// padded axis-1 extent (so already-received axis-1 halos ride along).
    fn pack_y(&self, y0: usize, width: usize) -> Vec<f64> {
        let g = GHOST_WIDTH;
        let nx = self.n1l + 2 * g;
        let mut data = Vec::with_capacity(width * nx * self.n3);
        for i3 in 0..self.n3 {
            for dy in 0..width {
                let s = self.idx(0, g + y0 + dy, g + i3);
                data.extend_from_slice(&self.vals[s..s + nx]);
            }
        }
        data
    }

    fn unpack_y(&mut self, low_halo: bool, data: &[f64]) {
        let g = GHOST_WIDTH;
        let nx = self.n1l + 2 * g;
        let y_base = if low_halo { 0 } else { g + self.n2l };
        let mut pos = 0;
        for i3 in 0..self.n3 {
            for dy in 0..g {
                let d = self.idx(0, y_base + dy, g + i3);
                self.vals[d..d + nx].copy_from_slice(&data[pos..pos + nx]);
                pos += nx;
            }
        }
    }

    fn wrap_z(&mut self) {
        let g = GHOST_WIDTH;
        let nx = self.n1l + 2 * g;
        let ny = self.n2l + 2 * g;
        let plane = nx * ny;
        for dz in 0..g {
            // low pad from top interior planes
            let (dst, src) = (dz, self.n3 + dz);
            let (d, s) = (dst * plane, src * plane);
            let (head, tail) = self.vals.split_at_mut(s);
            head[d..d + plane].copy_from_slice(&tail[..plane]);
            // high pad from bottom interior planes
            let dst_hi = (g + self.n3 + dz) * plane;
            let src_lo = (g + dz) * plane;
            let (head, tail) = self.vals.split_at_mut(dst_hi);
            tail[..plane].copy_from_slice(&head[src_lo..src_lo + plane]);
        }
    }

    fn interpolate(&self, work: &[PlannedPoint]) -> Vec<f64> {
        let g = GHOST_WIDTH;
        let mut out = Vec::with_capacity(work.len());
        for p in work {
            let wx = lagrange_weights(p.frac[0]);
            let wy = lagrange_weights(p.frac[1]);
            let wz = lagrange_weights(p.frac[2]);
            // stencil base in padded coordinates: cell-1 .. cell+2
            let b1 = p.cell[0] as usize - self.lo1 + g - 1;
            let b2 = p.cell[1] as usize - self.lo2 + g - 1;
            let b3 = p.cell[2] as usize + g - 1;
            out.push(kernel_sum(&wx, &wy, &wz, |a, b, c| {
                self.vals[self.idx(b1 + a, b2 + b, b3 + c)]
            }));
        }
        out
    }
}
