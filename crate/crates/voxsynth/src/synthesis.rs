//! Patch-based synthesis over column images.
//!
//! A canvas is filled in scanline order by pasting patches of voxel columns
//! copied from an exemplar. Each placement matches the already-written part
//! of its footprint (the overlap) against an exemplar patch set, then blends
//! the overlap with an inverse-distance ramp so seams feather from existing
//! content into the fresh region.
//!
//! Determinism contract: candidate orderings are always ascending
//! `(distance, patch id)`, where ids enumerate windows in scan order with
//! rotation as the inner key; distances accumulate in f64 over mask cells in
//! scan order and channels in selector order. All stochastic choices draw
//! exactly once per placement from a caller-seeded stream.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::column::{ChannelLattice, ColumnImage};
use crate::kdtree::KdTree;
use crate::shading::ShadingMap;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SynthesisParams {
    /// Patch footprint width in columns.
    pub w_p: usize,
    /// Overlap width between adjacent placements.
    pub w_o: usize,
    /// Sliding-window stride for patch extraction.
    pub extraction_step: usize,
    /// Candidate count for geometry matching.
    pub k_g: usize,
    /// Candidate count for shading-guided matching.
    pub k_s: usize,
    /// Match-distance threshold; candidates above it are dropped, with the
    /// single nearest kept as a fallback when all are above.
    pub eta: f64,
    /// Density-channel weight for the combined-channel baseline.
    pub lambda: f64,
    /// Extract each patch at four quarter-turn rotations.
    pub rotations: bool,
    /// Pick the best candidate instead of sampling by distance.
    pub greedy: bool,
    pub seed: u64,
}

impl Default for SynthesisParams {
    fn default() -> SynthesisParams {
        SynthesisParams {
            w_p: 15,
            w_o: 5,
            extraction_step: 3,
            k_g: 10,
            k_s: 20,
            eta: f64::INFINITY,
            lambda: 1.0,
            rotations: false,
            greedy: false,
            seed: 0,
        }
    }
}

impl SynthesisParams {
    pub fn validate(&self) -> Result<()> {
        if self.w_o == 0 || self.w_o >= self.w_p {
            return Err(Error::InvalidData("overlap width must satisfy 0 < w_o < w_p".into()));
        }
        if self.k_g == 0 || self.extraction_step == 0 {
            return Err(Error::InvalidData("k_g and extraction_step must be at least 1".into()));
        }
        if !(self.eta >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::InvalidData("eta and lambda must be non-negative".into()));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.w_p - self.w_o
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Rect {
        Rect { x0, y0, x1, y1 }
    }

    pub fn width_x(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn width_y(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionTag {
    Corner,
    Up,
    Down,
    Left,
    Right,
    Interior,
}

impl std::fmt::Display for RegionTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RegionTag::Corner => "corner",
            RegionTag::Up => "up",
            RegionTag::Down => "down",
            RegionTag::Left => "left",
            RegionTag::Right => "right",
            RegionTag::Interior => "interior",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for RegionTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<RegionTag> {
        Ok(match s {
            "corner" => RegionTag::Corner,
            "up" => RegionTag::Up,
            "down" => RegionTag::Down,
            "left" => RegionTag::Left,
            "right" => RegionTag::Right,
            "interior" => RegionTag::Interior,
            _ => return Err(Error::InvalidData(format!("unknown region tag `{}`", s))),
        })
    }
}

// ------------------------------------------------------------- patch sets

/// One extractable patch: a window origin in its rotation's lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub x: usize,
    pub y: usize,
    pub rot: u8,
}

static NEXT_SET_TOKEN: AtomicU64 = AtomicU64::new(1);

/// All candidate source patches for a synthesis run. `windows[id]` defines
/// patch `id`; ids enumerate windows in scan order with rotation innermost,
/// so ascending id order is (window, rotation) order.
#[derive(Debug)]
pub struct PatchSet {
    /// Source lattice per rotation (a single entry when rotations are off).
    pub sources: Vec<ColumnImage>,
    /// Optional shading lattice per rotation, aligned with `sources`.
    pub shading: Option<Vec<ChannelLattice>>,
    pub windows: Vec<Window>,
    /// Footprint rows and columns.
    pub fh: usize,
    pub fw: usize,
    pub n_rots: usize,
    /// Distinguishes sets inside an index cache; no other meaning.
    token: u64,
}

fn window_origins(n: usize, w: usize, step: usize) -> Vec<usize> {
    (0..=(n - w)).step_by(step).collect()
}

impl PatchSet {
    /// Every `fh x fw` window of the exemplar at the given stride, with
    /// optional quarter-turn rotation augmentation (square footprints only).
    pub fn extract(
        exemplar: &ColumnImage,
        fh: usize,
        fw: usize,
        step: usize,
        rotations: bool,
        shading: Option<&ChannelLattice>,
    ) -> Result<PatchSet> {
        let (nx, ny) = exemplar.dims();
        if nx < fh || ny < fw {
            return Err(Error::ExemplarTooSmall(format!(
                "exemplar {}x{} smaller than the {}x{} patch footprint",
                nx, ny, fh, fw
            )));
        }
        if rotations && fh != fw {
            return Err(Error::InvalidData("rotation augmentation needs a square footprint".into()));
        }
        if let Some(sh) = shading {
            if sh.nx != nx || sh.ny != ny {
                return Err(Error::SizeMismatch("shading lattice must match exemplar dimensions".into()));
            }
        }
        let n_rots = if rotations { 4 } else { 1 };
        let sources: Vec<ColumnImage> = (0..n_rots).map(|r| exemplar.rotated(r)).collect();
        let shading_rot = shading.map(|sh| (0..n_rots).map(|r| sh.rotated(r)).collect::<Vec<_>>());

        let per_rot: Vec<Vec<Window>> = sources
            .iter()
            .enumerate()
            .map(|(r, src)| {
                let (rnx, rny) = src.dims();
                let mut v = Vec::new();
                for x in window_origins(rnx, fh, step) {
                    for y in window_origins(rny, fw, step) {
                        v.push(Window { x, y, rot: r as u8 });
                    }
                }
                v
            })
            .collect();
        let n_windows = per_rot[0].len();
        debug_assert!(per_rot.iter().all(|v| v.len() == n_windows));
        let mut windows = Vec::with_capacity(n_windows * n_rots);
        for w in 0..n_windows {
            for rot_list in &per_rot {
                windows.push(rot_list[w]);
            }
        }
        Ok(PatchSet {
            sources,
            shading: shading_rot,
            windows,
            fh,
            fw,
            n_rots,
            token: NEXT_SET_TOKEN.fetch_add(1, Ordering::Relaxed),
        })
    }

    /// Windows restricted to a sub-rectangle of the exemplar, unrotated.
    /// Used for region-constrained synthesis.
    pub fn extract_rect(
        exemplar: &ColumnImage,
        rect: Rect,
        fh: usize,
        fw: usize,
        step: usize,
    ) -> Result<PatchSet> {
        let (nx, ny) = exemplar.dims();
        if rect.x1 > nx || rect.y1 > ny {
            return Err(Error::InvalidData("patch source rectangle exceeds the exemplar".into()));
        }
        if rect.width_x() < fh || rect.width_y() < fw {
            return Err(Error::NoCandidates(format!(
                "source rectangle {}x{} admits no {}x{} patches",
                rect.width_x(),
                rect.width_y(),
                fh,
                fw
            )));
        }
        let mut windows = Vec::new();
        for x in window_origins(rect.width_x(), fh, step) {
            for y in window_origins(rect.width_y(), fw, step) {
                windows.push(Window { x: rect.x0 + x, y: rect.y0 + y, rot: 0 });
            }
        }
        Ok(PatchSet {
            sources: vec![exemplar.clone()],
            shading: None,
            windows,
            fh,
            fw,
            n_rots: 1,
            token: NEXT_SET_TOKEN.fetch_add(1, Ordering::Relaxed),
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn view(&self, id: u32) -> CellView<'_> {
        let w = &self.windows[id as usize];
        let src = &self.sources[w.rot as usize];
        CellView {
            density: &src.density,
            feature: &src.feature,
            shading: self.shading.as_ref().map(|s| &s[w.rot as usize]),
            ox: w.x,
            oy: w.y,
        }
    }
}

/// A window into column lattices, addressed by footprint-local cells.
#[derive(Clone, Copy)]
pub struct CellView<'a> {
    pub density: &'a ChannelLattice,
    pub feature: &'a ChannelLattice,
    pub shading: Option<&'a ChannelLattice>,
    pub ox: usize,
    pub oy: usize,
}

impl<'a> CellView<'a> {
    pub fn of_image(img: &'a ColumnImage, ox: usize, oy: usize) -> CellView<'a> {
        CellView { density: &img.density, feature: &img.feature, shading: None, ox, oy }
    }

    pub fn with_shading(mut self, lat: &'a ChannelLattice) -> CellView<'a> {
        self.shading = Some(lat);
        self
    }

    #[inline]
    fn density_col(&self, di: usize, dj: usize) -> &'a [f32] {
        self.density.col(self.ox + di, self.oy + dj)
    }

    #[inline]
    fn feature_col(&self, di: usize, dj: usize) -> &'a [f32] {
        self.feature.col(self.ox + di, self.oy + dj)
    }

    #[inline]
    fn shading_col(&self, di: usize, dj: usize) -> &'a [f32] {
        self.shading.expect("cell view has no shading lattice").col(self.ox + di, self.oy + dj)
    }
}

// ---------------------------------------------------------- masks & metric

/// Which cells of a (possibly cropped) footprint are already synthesized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapMask {
    pub fh: usize,
    pub fw: usize,
    pub cells: Vec<bool>,
}

impl OverlapMask {
    pub fn new(fh: usize, fw: usize, cells: Vec<bool>) -> OverlapMask {
        assert_eq!(cells.len(), fh * fw);
        OverlapMask { fh, fw, cells }
    }

    pub fn full(fh: usize, fw: usize) -> OverlapMask {
        OverlapMask { fh, fw, cells: vec![true; fh * fw] }
    }

    #[inline]
    pub fn get(&self, di: usize, dj: usize) -> bool {
        self.cells[di * self.fw + dj]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.cells.iter().any(|&b| b)
    }

    pub fn all(&self) -> bool {
        self.cells.iter().all(|&b| b)
    }

    /// Masked cells in scan order; the canonical enumeration for distances
    /// and index vectors.
    pub fn iter_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let fw = self.fw;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / fw, i % fw))
    }
}

/// Which channels of a column cell participate in a match distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector {
    Density,
    Feature,
    /// Density and feature channels combined, density scaled by lambda.
    Concat { lambda: f64 },
    Shading,
}

fn push_cell(view: &CellView<'_>, di: usize, dj: usize, sel: Selector, out: &mut Vec<f32>) {
    match sel {
        Selector::Density => out.extend_from_slice(view.density_col(di, dj)),
        Selector::Feature => out.extend_from_slice(view.feature_col(di, dj)),
        Selector::Concat { lambda } => {
            let l = lambda as f32;
            out.extend(view.density_col(di, dj).iter().map(|&v| l * v));
            out.extend_from_slice(view.feature_col(di, dj));
        }
        Selector::Shading => out.extend_from_slice(view.shading_col(di, dj)),
    }
}

/// The selector's channel values at every masked cell, in canonical order.
pub fn build_vector(view: &CellView<'_>, mask: &OverlapMask, sel: Selector) -> Vec<f32> {
    let mut out = Vec::new();
    for (di, dj) in mask.iter_cells() {
        push_cell(view, di, dj, sel, &mut out);
    }
    out
}

/// L2 distance between two windows over masked cells and selector channels.
/// Accumulation order matches `build_vector`, so results are bit-identical
/// to distances computed from index vectors.
pub fn patch_distance(
    a: &CellView<'_>,
    b: &CellView<'_>,
    mask: &OverlapMask,
    sel: Selector,
) -> Result<f64> {
    if !mask.any() {
        return Err(Error::EmptyMask);
    }
    let mut acc = 0.0f64;
    let mut va: Vec<f32> = Vec::new();
    let mut vb: Vec<f32> = Vec::new();
    for (di, dj) in mask.iter_cells() {
        va.clear();
        vb.clear();
        push_cell(a, di, dj, sel, &mut va);
        push_cell(b, di, dj, sel, &mut vb);
        for (x, y) in va.iter().zip(vb.iter()) {
            let d = *x as f64 - *y as f64;
            acc += d * d;
        }
    }
    Ok(acc.sqrt())
}

// ----------------------------------------------------------------- indexes

/// Searchable set of per-patch vectors for one (selector, mask) pair.
pub struct PatchIndex {
    tree: KdTree,
    pub dim: usize,
}

/// kd-tree over the masked selector vectors of every patch in the set.
pub fn build_index(set: &PatchSet, mask: &OverlapMask, sel: Selector) -> Result<PatchIndex> {
    if set.is_empty() {
        return Err(Error::NoCandidates("empty patch set".into()));
    }
    if !mask.any() {
        return Err(Error::EmptyMask);
    }
    let mut pts: Vec<f32> = Vec::new();
    for id in 0..set.len() as u32 {
        pts.extend(build_vector(&set.view(id), mask, sel));
    }
    let dim = pts.len() / set.len();
    let tree = KdTree::build(&pts, dim)?;
    Ok(PatchIndex { tree, dim })
}

/// The `min(k, n)` patches nearest to `query`, ascending by
/// `(distance, patch id)`. Exact.
pub fn ann_search(index: &PatchIndex, query: &[f32], k: usize) -> Vec<(u32, f64)> {
    index
        .tree
        .knn(query, k)
        .into_iter()
        .map(|n| (n.id, n.dist2.sqrt()))
        .collect()
}

/// The same `min(k, n)` nearest patches found by a direct scan of the set,
/// with no precomputed structure. Accumulation order matches `build_vector`,
/// so results are bit-identical to `ann_search` over an index of the same
/// vectors. Candidates are dropped once their partial sum strictly exceeds
/// the current worst kept distance, which never changes the result.
pub fn scan_nearest(
    set: &PatchSet,
    mask: &OverlapMask,
    sel: Selector,
    query: &[f32],
    k: usize,
) -> Result<Vec<(u32, f64)>> {
    if set.is_empty() {
        return Err(Error::NoCandidates("empty patch set".into()));
    }
    if !mask.any() {
        return Err(Error::EmptyMask);
    }
    let cells: Vec<(usize, usize)> = mask.iter_cells().collect();
    let k = k.min(set.len());
    // Ascending (dist2, id); the last entry is the current worst.
    let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
    let mut scratch: Vec<f32> = Vec::new();
    for id in 0..set.len() as u32 {
        let view = set.view(id);
        let full = best.len() == k;
        let worst = if full { best[k - 1].0 } else { f64::INFINITY };
        let mut acc = 0.0f64;
        let mut qi = 0usize;
        let mut pruned = false;
        for &(di, dj) in &cells {
            scratch.clear();
            push_cell(&view, di, dj, sel, &mut scratch);
            for &v in &scratch {
                let d = v as f64 - query[qi] as f64;
                qi += 1;
                acc += d * d;
            }
            if acc > worst {
                pruned = true;
                break;
            }
        }
        if pruned || (full && !(acc < worst || id < best[k - 1].1)) {
            continue;
        }
        if full {
            best.pop();
        }
        let at = best.partition_point(|&(d2, bid)| d2 < acc || (d2 == acc && bid < id));
        best.insert(at, (acc, id));
    }
    Ok(best.into_iter().map(|(d2, id)| (id, d2.sqrt())).collect())
}

/// Drop candidates with distance above `eta`; keep the nearest when that
/// would drop everything.
pub fn eta_filter(cands: Vec<(u32, f64)>, eta: f64) -> Vec<(u32, f64)> {
    if cands.is_empty() {
        return cands;
    }
    let kept: Vec<(u32, f64)> = cands.iter().copied().filter(|&(_, d)| d <= eta).collect();
    if kept.is_empty() {
        vec![cands[0]]
    } else {
        kept
    }
}

#[derive(Debug, PartialEq, Eq, Hash, Clone)]
struct IndexKey {
    set_token: u64,
    sel_kind: u8,
    lambda_bits: u64,
    cells: Vec<u32>,
}

fn index_key(set: &PatchSet, mask: &OverlapMask, sel: Selector) -> IndexKey {
    let (sel_kind, lambda_bits) = match sel {
        Selector::Density => (0u8, 0u64),
        Selector::Feature => (1, 0),
        Selector::Concat { lambda } => (2, lambda.to_bits()),
        Selector::Shading => (3, 0),
    };
    // Masks with the same true-cell coordinates index identical vectors even
    // when their cropped footprints differ, so the key is the cell list.
    let cells = mask.iter_cells().map(|(di, dj)| ((di as u32) << 16) | dj as u32).collect();
    IndexKey { set_token: set.token, sel_kind, lambda_bits, cells }
}

/// Most-recently-used cache of patch indexes. High-dimensional indexes are
/// large, so only a few live at once; scanline fills cycle through a small
/// set of mask shapes and stay warm.
pub struct IndexCache {
    entries: Vec<(IndexKey, PatchIndex)>,
    cap: usize,
}

impl IndexCache {
    pub fn new(cap: usize) -> IndexCache {
        IndexCache { entries: Vec::new(), cap: cap.max(1) }
    }

    /// Query the cached index for this (set, mask, selector), building and
    /// evicting as needed.
    pub fn search(
        &mut self,
        set: &PatchSet,
        mask: &OverlapMask,
        sel: Selector,
        query: &[f32],
        k: usize,
    ) -> Result<Vec<(u32, f64)>> {
        let key = index_key(set, mask, sel);
        let pos = self.entries.iter().position(|(k2, _)| *k2 == key);
        let pos = match pos {
            Some(p) => p,
            None => {
                let idx = build_index(set, mask, sel)?;
                self.entries.insert(0, (key, idx));
                self.entries.truncate(self.cap);
                0
            }
        };
        let entry = self.entries.remove(pos);
        let out = ann_search(&entry.1, query, k);
        self.entries.insert(0, entry);
        Ok(out)
    }
}

// --------------------------------------------------------------- selection

/// Sample an index into `cands` with probability proportional to
/// `exp(-d_i^2 / (2 dbar^2))`, `dbar` the mean candidate distance. All-zero
/// (or degenerate) distances fall back to uniform. Draws exactly one f64.
pub fn select_by_pdf(cands: &[(u32, f64)], rng: &mut ChaCha8Rng) -> usize {
    assert!(!cands.is_empty(), "select_by_pdf needs candidates");
    let dbar = cands.iter().map(|&(_, d)| d).sum::<f64>() / cands.len() as f64;
    let denom = 2.0 * dbar * dbar;
    let weights: Vec<f64> = if denom > f64::MIN_POSITIVE {
        cands.iter().map(|&(_, d)| (-d * d / denom).exp()).collect()
    } else {
        vec![1.0; cands.len()]
    };
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    cands.len() - 1
}

/// A completed selection: the patch id and its two component distances.
#[derive(Debug, Clone, PartialEq)]
pub struct Chosen {
    pub id: u32,
    pub d_density: f64,
    pub d_feature: f64,
}

/// Geometry-then-appearance selection: the `k_g` density-nearest patches are
/// rescored by feature distance on the same mask, then one is picked
/// (greedy minimum or distance-weighted draw). `restrict` limits phase 1 to
/// the given ids, scanned directly instead of through an index.
pub fn two_phase_select(
    target: &CellView<'_>,
    mask: &OverlapMask,
    set: &PatchSet,
    cache: &mut IndexCache,
    params: &SynthesisParams,
    restrict: Option<&[u32]>,
    rng: &mut ChaCha8Rng,
) -> Result<Chosen> {
    if !mask.any() {
        return Err(Error::EmptyMask);
    }
    let cands: Vec<(u32, f64)> = match restrict {
        None => {
            let q = build_vector(target, mask, Selector::Density);
            cache.search(set, mask, Selector::Density, &q, params.k_g)?
        }
        Some(ids) => {
            if ids.is_empty() {
                return Err(Error::NoCandidates("empty restriction set".into()));
            }
            let mut scored: Vec<(u32, f64)> = ids
                .iter()
                .map(|&id| Ok((id, patch_distance(target, &set.view(id), mask, Selector::Density)?)))
                .collect::<Result<_>>()?;
            scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            scored.truncate(params.k_g);
            scored
        }
    };
    let cands = eta_filter(cands, params.eta);

    let mut scored: Vec<(u32, f64, f64)> = cands
        .into_iter()
        .map(|(id, dd)| {
            let df = patch_distance(target, &set.view(id), mask, Selector::Feature)?;
            Ok((id, df, dd))
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let pick = if params.greedy {
        0
    } else {
        let pdf_in: Vec<(u32, f64)> = scored.iter().map(|&(id, df, _)| (id, df)).collect();
        select_by_pdf(&pdf_in, rng)
    };
    let (id, d_feature, d_density) = scored[pick];
    Ok(Chosen { id, d_density, d_feature })
}

/// Single-query selection on the lambda-combined channels, then the same
/// greedy-or-draw pick. Every placement scans the whole set directly; the
/// ablation baseline for `two_phase_select`.
pub fn baseline_select(
    target: &CellView<'_>,
    mask: &OverlapMask,
    set: &PatchSet,
    params: &SynthesisParams,
    rng: &mut ChaCha8Rng,
) -> Result<Chosen> {
    if !mask.any() {
        return Err(Error::EmptyMask);
    }
    let sel = Selector::Concat { lambda: params.lambda };
    let q = build_vector(target, mask, sel);
    let cands = eta_filter(scan_nearest(set, mask, sel, &q, params.k_g)?, params.eta);
    let pick = if params.greedy { 0 } else { select_by_pdf(&cands, rng) };
    let id = cands[pick].0;
    let view = set.view(id);
    Ok(Chosen {
        id,
        d_density: patch_distance(target, &view, mask, Selector::Density)?,
        d_feature: patch_distance(target, &view, mask, Selector::Feature)?,
    })
}

// ---------------------------------------------------------------- blending

/// Chebyshev distance to the nearest false cell, per footprint cell.
/// Two-pass 8-neighbor transform; exact for this metric.
fn chebyshev_to_false(fh: usize, fw: usize, cells: &[bool]) -> Vec<i32> {
    const BIG: i32 = i32::MAX / 4;
    let mut d: Vec<i32> = cells.iter().map(|&b| if b { BIG } else { 0 }).collect();
    let idx = |i: usize, j: usize| i * fw + j;
    for i in 0..fh {
        for j in 0..fw {
            let mut best = d[idx(i, j)];
            if i > 0 {
                best = best.min(d[idx(i - 1, j)] + 1);
                if j > 0 {
                    best = best.min(d[idx(i - 1, j - 1)] + 1);
                }
                if j + 1 < fw {
                    best = best.min(d[idx(i - 1, j + 1)] + 1);
                }
            }
            if j > 0 {
                best = best.min(d[idx(i, j - 1)] + 1);
            }
            d[idx(i, j)] = best;
        }
    }
    for i in (0..fh).rev() {
        for j in (0..fw).rev() {
            let mut best = d[idx(i, j)];
            if i + 1 < fh {
                best = best.min(d[idx(i + 1, j)] + 1);
                if j > 0 {
                    best = best.min(d[idx(i + 1, j - 1)] + 1);
                }
                if j + 1 < fw {
                    best = best.min(d[idx(i + 1, j + 1)] + 1);
                }
            }
            if j + 1 < fw {
                best = best.min(d[idx(i, j + 1)] + 1);
            }
            d[idx(i, j)] = best;
        }
    }
    d
}

/// Per-cell weight of the incoming patch. Fresh cells get 1. Overlap cells
/// ramp from 0 at footprint edges that border existing content (edges whose
/// whole boundary line is masked) to 1 next to the fresh region:
/// `w = a / (a + b)` with `a` the Chebyshev distance to the nearest such
/// edge and `b` the distance to the fresh region minus one. A placement
/// with no qualifying edge keeps existing content (`w = 0`) in its overlap.
pub fn blend_weights(mask: &OverlapMask) -> Vec<f64> {
    let (fh, fw) = (mask.fh, mask.fw);
    let mut w = vec![1.0f64; fh * fw];
    if !mask.any() {
        return w;
    }
    debug_assert!(!mask.all(), "blend_weights needs at least one fresh cell");

    let top = (0..fw).all(|j| mask.get(0, j));
    let bottom = (0..fw).all(|j| mask.get(fh - 1, j));
    let left = (0..fh).all(|i| mask.get(i, 0));
    let right = (0..fh).all(|i| mask.get(i, fw - 1));

    let dist_fresh = chebyshev_to_false(fh, fw, &mask.cells);
    for i in 0..fh {
        for j in 0..fw {
            if !mask.get(i, j) {
                continue;
            }
            let mut a = i32::MAX;
            if top {
                a = a.min(i as i32);
            }
            if bottom {
                a = a.min((fh - 1 - i) as i32);
            }
            if left {
                a = a.min(j as i32);
            }
            if right {
                a = a.min((fw - 1 - j) as i32);
            }
            if a == i32::MAX {
                a = 0;
            }
            let b = dist_fresh[i * fw + j] - 1;
            w[i * fw + j] = if a + b == 0 { 0.5 } else { a as f64 / (a + b) as f64 };
        }
    }
    w
}

// ------------------------------------------------------------------ canvas

/// A column image under construction, with occupancy and write protection.
pub struct Canvas {
    pub img: ColumnImage,
    pub written: Vec<bool>,
    pub protected: Vec<bool>,
}

impl Canvas {
    pub fn new(nx: usize, ny: usize, nz: usize, channels: usize) -> Canvas {
        Canvas {
            img: ColumnImage {
                density: ChannelLattice::new(nx, ny, nz, 0.0),
                feature: ChannelLattice::new(nx, ny, channels * nz, 0.0),
                nz,
                channels,
            },
            written: vec![false; nx * ny],
            protected: vec![false; nx * ny],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.img.dims()
    }

    #[inline]
    fn idx(&self, x: usize, y: usize) -> usize {
        x * self.img.density.ny + y
    }

    pub fn mask_at(&self, origin: (usize, usize), fh: usize, fw: usize) -> OverlapMask {
        let mut cells = Vec::with_capacity(fh * fw);
        for di in 0..fh {
            for dj in 0..fw {
                cells.push(self.written[self.idx(origin.0 + di, origin.1 + dj)]);
            }
        }
        OverlapMask::new(fh, fw, cells)
    }

    /// Freeze everything written so far against later blending. Used between
    /// phases of region-constrained synthesis.
    pub fn protect_written(&mut self) {
        self.protected.copy_from_slice(&self.written);
    }

    pub fn rect_written(&self, rect: Rect) -> bool {
        for x in rect.x0..rect.x1 {
            for y in rect.y0..rect.y1 {
                if !self.written[self.idx(x, y)] {
                    return false;
                }
            }
        }
        true
    }

    /// Copy a source window verbatim and mark it written. Ignores masks and
    /// protection; callers use it for seeding only.
    pub fn paste_verbatim(&mut self, origin: (usize, usize), src: &CellView<'_>, fh: usize, fw: usize) {
        for di in 0..fh {
            for dj in 0..fw {
                let (gx, gy) = (origin.0 + di, origin.1 + dj);
                self.img.density.col_mut(gx, gy).copy_from_slice(src.density_col(di, dj));
                self.img.feature.col_mut(gx, gy).copy_from_slice(src.feature_col(di, dj));
                let k = self.idx(gx, gy);
                self.written[k] = true;
            }
        }
    }

    /// Paste one placement: fresh cells verbatim, masked cells blended with
    /// the given weights, protected cells untouched.
    pub fn paste_blend(
        &mut self,
        origin: (usize, usize),
        src: &CellView<'_>,
        mask: &OverlapMask,
        weights: &[f64],
    ) {
        for di in 0..mask.fh {
            for dj in 0..mask.fw {
                let (gx, gy) = (origin.0 + di, origin.1 + dj);
                let k = self.idx(gx, gy);
                if !mask.get(di, dj) {
                    self.img.density.col_mut(gx, gy).copy_from_slice(src.density_col(di, dj));
                    self.img.feature.col_mut(gx, gy).copy_from_slice(src.feature_col(di, dj));
                    self.written[k] = true;
                    continue;
                }
                if self.protected[k] {
                    continue;
                }
                let w = weights[di * mask.fw + dj];
                if w == 0.0 {
                    continue;
                }
                if w == 1.0 {
                    self.img.density.col_mut(gx, gy).copy_from_slice(src.density_col(di, dj));
                    self.img.feature.col_mut(gx, gy).copy_from_slice(src.feature_col(di, dj));
                    continue;
                }
                let dn = src.density_col(di, dj);
                for (o, n) in self.img.density.col_mut(gx, gy).iter_mut().zip(dn.iter()) {
                    let old = *o as f64;
                    *o = (old + w * (*n as f64 - old)) as f32;
                }
                let fn_ = src.feature_col(di, dj);
                for (o, n) in self.img.feature.col_mut(gx, gy).iter_mut().zip(fn_.iter()) {
                    let old = *o as f64;
                    *o = (old + w * (*n as f64 - old)) as f32;
                }
            }
        }
    }
}

// ------------------------------------------------------------------ driver

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    TwoPhase,
    Baseline,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Mode> {
        Ok(match s {
            "two_phase" => Mode::TwoPhase,
            "baseline" => Mode::Baseline,
            _ => return Err(Error::UnknownMode(s.to_string())),
        })
    }
}

/// One placement, as recorded in the synthesis log.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementRecord {
    pub tx: usize,
    pub ty: usize,
    pub sx: usize,
    pub sy: usize,
    pub rot: u8,
    pub id: u32,
    pub d_density: f64,
    pub d_feature: f64,
    pub region: Option<RegionTag>,
    /// Shading-phase candidate ids when the placement was guided.
    pub shading_candidates: Option<Vec<u32>>,
}

/// Shading guidance for a fill: the target's normalized shading map and the
/// number of shading-nearest candidates to keep.
pub struct Guide<'a> {
    pub target: &'a ShadingMap,
    pub k_s: usize,
}

/// One region-fill work order for `fill_scanline`.
pub struct FillJob<'a> {
    pub set: &'a PatchSet,
    pub mode: Mode,
    /// Cells that must all be written when the fill completes.
    pub rect: Rect,
    /// Uncropped footprint (rows, cols).
    pub footprint: (usize, usize),
    /// Origin of the placement grid; positions advance by the stride.
    pub anchor: (usize, usize),
    /// Verbatim source for a placement with an empty mask; random if None.
    pub seed_window: Option<u32>,
    pub region: Option<RegionTag>,
    pub guide: Option<Guide<'a>>,
}

fn grid_positions(anchor: usize, stride: usize, fp: usize, end: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut p = anchor;
    loop {
        v.push(p);
        if p + fp >= end {
            break;
        }
        p += stride;
    }
    v
}

/// Fill `job.rect` in scanline order. Placements sit on the anchored stride
/// grid; footprints are cropped at the canvas edge; positions whose
/// footprint is already fully written are skipped.
pub fn fill_scanline(
    canvas: &mut Canvas,
    job: &FillJob<'_>,
    cache: &mut IndexCache,
    params: &SynthesisParams,
    rng: &mut ChaCha8Rng,
    log: &mut Vec<PlacementRecord>,
) -> Result<()> {
    params.validate()?;
    if job.set.is_empty() {
        return Err(Error::NoCandidates("patch set is empty".into()));
    }
    let (nx, ny) = canvas.dims();
    let stride = params.stride();
    let xs = grid_positions(job.anchor.0, stride, job.footprint.0, job.rect.x1);
    let ys = grid_positions(job.anchor.1, stride, job.footprint.1, job.rect.y1);
    for &px in &xs {
        for &py in &ys {
            let fh = job.footprint.0.min(nx - px);
            let fw = job.footprint.1.min(ny - py);
            let mask = canvas.mask_at((px, py), fh, fw);
            if mask.all() {
                continue;
            }
            if !mask.any() {
                let id = job
                    .seed_window
                    .unwrap_or_else(|| rng.gen_range(0..job.set.len() as u32));
                let w = job.set.windows[id as usize];
                canvas.paste_verbatim((px, py), &job.set.view(id), fh, fw);
                log.push(PlacementRecord {
                    tx: px,
                    ty: py,
                    sx: w.x,
                    sy: w.y,
                    rot: w.rot,
                    id,
                    d_density: 0.0,
                    d_feature: 0.0,
                    region: job.region,
                    shading_candidates: None,
                });
                continue;
            }

            let restrict: Option<Vec<u32>> = match &job.guide {
                None => None,
                Some(g) => {
                    let tview =
                        CellView::of_image(&canvas.img, px, py).with_shading(&g.target.lat);
                    let full = OverlapMask::full(fh, fw);
                    let q = build_vector(&tview, &full, Selector::Shading);
                    let near = cache.search(job.set, &full, Selector::Shading, &q, g.k_s)?;
                    Some(near.into_iter().map(|(id, _)| id).collect())
                }
            };

            let target = CellView::of_image(&canvas.img, px, py);
            let chosen = match job.mode {
                Mode::TwoPhase => two_phase_select(
                    &target,
                    &mask,
                    job.set,
                    cache,
                    params,
                    restrict.as_deref(),
                    rng,
                )?,
                Mode::Baseline => baseline_select(&target, &mask, job.set, params, rng)?,
            };
            let weights = blend_weights(&mask);
            canvas.paste_blend((px, py), &job.set.view(chosen.id), &mask, &weights);
            let w = job.set.windows[chosen.id as usize];
            log.push(PlacementRecord {
                tx: px,
                ty: py,
                sx: w.x,
                sy: w.y,
                rot: w.rot,
                id: chosen.id,
                d_density: chosen.d_density,
                d_feature: chosen.d_feature,
                region: job.region,
                shading_candidates: restrict,
            });
        }
    }
    assert!(canvas.rect_written(job.rect), "scanline fill left unwritten cells");
    Ok(())
}

/// Synthesize an `out`-sized column image from an exemplar. The first
/// placement is seeded (`seed_window`, or a random patch); the rest are
/// selected by `mode` and blended over their overlaps.
pub fn synthesize(
    exemplar: &ColumnImage,
    out: (usize, usize),
    params: &SynthesisParams,
    mode: Mode,
    seed_window: Option<u32>,
) -> Result<(ColumnImage, Vec<PlacementRecord>)> {
    params.validate()?;
    if out.0 < params.w_p || out.1 < params.w_p {
        return Err(Error::ExemplarTooSmall(format!(
            "output {}x{} smaller than the patch footprint {}",
            out.0, out.1, params.w_p
        )));
    }
    let set = PatchSet::extract(
        exemplar,
        params.w_p,
        params.w_p,
        params.extraction_step,
        params.rotations,
        None,
    )?;
    let mut canvas = Canvas::new(out.0, out.1, exemplar.nz, exemplar.channels);
    let mut cache = IndexCache::new(4);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut log = Vec::new();
    let job = FillJob {
        set: &set,
        mode,
        rect: Rect::new(0, 0, out.0, out.1),
        footprint: (params.w_p, params.w_p),
        anchor: (0, 0),
        seed_window,
        region: None,
        guide: None,
    };
    fill_scanline(&mut canvas, &job, &mut cache, params, &mut rng, &mut log)?;
    Ok((canvas.img, log))
}

// --------------------------------------------------------------------- log

/// One line per placement: `tx ty sx sy rot d_density d_feature[ region]`,
/// rotation in degrees.
pub fn format_placement_log(records: &[PlacementRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&format!(
            "{} {} {} {} {} {} {}",
            r.tx,
            r.ty,
            r.sx,
            r.sy,
            r.rot as usize * 90,
            r.d_density,
            r.d_feature
        ));
        if let Some(tag) = r.region {
            s.push(' ');
            s.push_str(&tag.to_string());
        }
        s.push('\n');
    }
    s
}

pub fn parse_placement_log(text: &str) -> Result<Vec<PlacementRecord>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        if parts.len() != 7 && parts.len() != 8 {
            return Err(Error::InvalidData(format!("log line {}: expected 7 or 8 fields", ln + 1)));
        }
        let bad = |what: &str| Error::InvalidData(format!("log line {}: bad {}", ln + 1, what));
        let deg: usize = parts[4].parse().map_err(|_| bad("rotation"))?;
        if deg % 90 != 0 || deg >= 360 {
            return Err(bad("rotation"));
        }
        out.push(PlacementRecord {
            tx: parts[0].parse().map_err(|_| bad("tx"))?,
            ty: parts[1].parse().map_err(|_| bad("ty"))?,
            sx: parts[2].parse().map_err(|_| bad("sx"))?,
            sy: parts[3].parse().map_err(|_| bad("sy"))?,
            rot: (deg / 90) as u8,
            id: 0,
            d_density: parts[5].parse().map_err(|_| bad("d_density"))?,
            d_feature: parts[6].parse().map_err(|_| bad("d_feature"))?,
            region: if parts.len() == 8 { Some(parts[7].parse()?) } else { None },
            shading_candidates: None,
        });
    }
    Ok(out)
}
