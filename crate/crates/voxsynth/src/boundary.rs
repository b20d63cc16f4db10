//! Boundary-constrained synthesis.
//!
//! The exemplar's border must survive verbatim in the output: corners are
//! copied bit-exact, each side strip is synthesized only from the matching
//! side of the exemplar, and the interior only from the interior. Fills run
//! corners, then strips, then interior, each phase write-protecting
//! everything already placed, so earlier regions cannot be blended over.
//!
//! Source windows for a region come from that region's rectangle extended
//! by the overlap width into its neighbors, which gives strips and interior
//! enough candidates to feather across region seams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::column::ColumnImage;
use crate::synthesis::{
    fill_scanline, synthesize, Canvas, CellView, FillJob, IndexCache, Mode, PatchSet,
    PlacementRecord, Rect, RegionTag, SynthesisParams,
};
use crate::{Error, Result};

/// Geometry of a bordered synthesis: exemplar and output sizes, border
/// thickness, and the patch parameters the rectangles depend on.
#[derive(Debug, Clone)]
pub struct BoundaryPartition {
    pub l_b: usize,
    pub w_p: usize,
    pub w_o: usize,
    pub ex: (usize, usize),
    pub out: (usize, usize),
}

impl BoundaryPartition {
    pub fn new(
        ex: (usize, usize),
        out: (usize, usize),
        l_b: usize,
        params: &SynthesisParams,
    ) -> Result<BoundaryPartition> {
        if 2 * l_b >= ex.0.min(ex.1) {
            return Err(Error::LbTooLarge(format!(
                "border {} is too thick for a {}x{} exemplar",
                l_b, ex.0, ex.1
            )));
        }
        if out.0 < 2 * l_b + params.w_p || out.1 < 2 * l_b + params.w_p {
            return Err(Error::LbTooLarge(format!(
                "output {}x{} cannot hold two {}-thick borders plus a {} footprint",
                out.0, out.1, l_b, params.w_p
            )));
        }
        Ok(BoundaryPartition { l_b, w_p: params.w_p, w_o: params.w_o, ex, out })
    }

    /// Region of an output cell.
    pub fn region_of(&self, x: usize, y: usize) -> RegionTag {
        let (ox, oy) = self.out;
        let l = self.l_b;
        let x_lo = x < l;
        let x_hi = x >= ox - l;
        let y_lo = y < l;
        let y_hi = y >= oy - l;
        match (x_lo || x_hi, y_lo || y_hi) {
            (true, true) => RegionTag::Corner,
            (true, false) => {
                if x_lo {
                    RegionTag::Up
                } else {
                    RegionTag::Down
                }
            }
            (false, true) => {
                if y_lo {
                    RegionTag::Left
                } else {
                    RegionTag::Right
                }
            }
            (false, false) => RegionTag::Interior,
        }
    }

    /// Exemplar rectangle a region's patches may be sourced from. Strips and
    /// interior are extended by the overlap width into their neighbors.
    pub fn source_rect(&self, region: RegionTag) -> Rect {
        let (nx, ny) = self.ex;
        let l = self.l_b;
        let lo = |n: usize| l.saturating_sub(self.w_o).min(n);
        let hi = |n: usize| (n - l + self.w_o).min(n);
        match region {
            RegionTag::Corner => panic!("corners have four source rects"),
            RegionTag::Up => Rect::new(0, lo(ny), l, hi(ny)),
            RegionTag::Down => Rect::new(nx - l, lo(ny), nx, hi(ny)),
            RegionTag::Left => Rect::new(lo(nx), 0, hi(nx), l),
            RegionTag::Right => Rect::new(lo(nx), ny - l, hi(nx), ny),
            RegionTag::Interior => Rect::new(lo(nx), lo(ny), hi(nx), hi(ny)),
        }
    }

    /// The four (exemplar origin, output origin) corner pairs, scan order.
    pub fn corner_pairs(&self) -> [((usize, usize), (usize, usize)); 4] {
        let (nx, ny) = self.ex;
        let (ox, oy) = self.out;
        let l = self.l_b;
        [
            ((0, 0), (0, 0)),
            ((0, ny - l), (0, oy - l)),
            ((nx - l, 0), (ox - l, 0)),
            ((nx - l, ny - l), (ox - l, oy - l)),
        ]
    }

    /// Output rectangle a strip or interior fill must cover.
    pub fn target_rect(&self, region: RegionTag) -> Rect {
        let (ox, oy) = self.out;
        let l = self.l_b;
        match region {
            RegionTag::Corner => panic!("corners have four target rects"),
            RegionTag::Up => Rect::new(0, l, l, oy - l),
            RegionTag::Down => Rect::new(ox - l, l, ox, oy - l),
            RegionTag::Left => Rect::new(l, 0, ox - l, l),
            RegionTag::Right => Rect::new(l, oy - l, ox - l, oy),
            RegionTag::Interior => Rect::new(l, l, ox - l, oy - l),
        }
    }

    /// Patch footprint used to fill a region.
    pub fn footprint(&self, region: RegionTag) -> (usize, usize) {
        let cross = self.l_b.min(self.w_p);
        match region {
            RegionTag::Up | RegionTag::Down => (cross, self.w_p),
            RegionTag::Left | RegionTag::Right => (self.w_p, cross),
            _ => (self.w_p, self.w_p),
        }
    }

    /// Placement-grid origin for a region's fill.
    pub fn anchor(&self, region: RegionTag) -> (usize, usize) {
        let (ox, oy) = self.out;
        let (fh, fw) = self.footprint(region);
        match region {
            RegionTag::Down => (ox - fh, 0),
            RegionTag::Right => (0, oy - fw),
            _ => (0, 0),
        }
    }
}

const STRIP_ORDER: [RegionTag; 4] =
    [RegionTag::Up, RegionTag::Down, RegionTag::Left, RegionTag::Right];

/// Copy the exemplar's four corners to the output corners verbatim.
fn place_corners(
    canvas: &mut Canvas,
    exemplar: &ColumnImage,
    part: &BoundaryPartition,
    log: &mut Vec<PlacementRecord>,
) {
    let l = part.l_b;
    for ((sx, sy), (tx, ty)) in part.corner_pairs() {
        canvas.paste_verbatim((tx, ty), &CellView::of_image(exemplar, sx, sy), l, l);
        log.push(PlacementRecord {
            tx,
            ty,
            sx,
            sy,
            rot: 0,
            id: 0,
            d_density: 0.0,
            d_feature: 0.0,
            region: Some(RegionTag::Corner),
            shading_candidates: None,
        });
    }
}

/// Synthesize with the exemplar border carried over verbatim: corners are
/// copied, side strips match only against the same side, the interior only
/// against the interior. A zero border degenerates to plain synthesis.
pub fn boundary_constrained_synthesize(
    exemplar: &ColumnImage,
    out: (usize, usize),
    l_b: usize,
    params: &SynthesisParams,
    seed_window: Option<u32>,
) -> Result<(ColumnImage, Vec<PlacementRecord>)> {
    params.validate()?;
    if l_b == 0 {
        let (img, mut log) = synthesize(exemplar, out, params, Mode::TwoPhase, seed_window)?;
        for r in &mut log {
            r.region = Some(RegionTag::Interior);
        }
        return Ok((img, log));
    }
    let part = BoundaryPartition::new(exemplar.dims(), out, l_b, params)?;
    let mut canvas = Canvas::new(out.0, out.1, exemplar.nz, exemplar.channels);
    let mut cache = IndexCache::new(4);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut log = Vec::new();

    place_corners(&mut canvas, exemplar, &part, &mut log);

    let mut regions: Vec<RegionTag> = STRIP_ORDER.to_vec();
    regions.push(RegionTag::Interior);
    for region in regions {
        canvas.protect_written();
        let (fh, fw) = part.footprint(region);
        let set = PatchSet::extract_rect(
            exemplar,
            part.source_rect(region),
            fh,
            fw,
            params.extraction_step,
        )?;
        let job = FillJob {
            set: &set,
            mode: Mode::TwoPhase,
            rect: part.target_rect(region),
            footprint: (fh, fw),
            anchor: part.anchor(region),
            seed_window: None,
            region: Some(region),
            guide: None,
        };
        fill_scanline(&mut canvas, &job, &mut cache, params, &mut rng, &mut log)?;
    }
    debug_assert!(canvas.rect_written(Rect::new(0, 0, out.0, out.1)));
    Ok((canvas.img, log))
}

/// Check that every logged placement was sourced from its region's
/// rectangle: corners from the exemplar corners, strips from their own
/// side, interior from the interior. Errors on the first violation.
pub fn audit_region_provenance(
    records: &[PlacementRecord],
    part: &BoundaryPartition,
) -> Result<()> {
    let corner_pairs = part.corner_pairs();
    for (i, r) in records.iter().enumerate() {
        let bad = |why: String| Error::InvalidData(format!("placement {}: {}", i, why));
        let region = r
            .region
            .ok_or_else(|| bad("missing region tag".to_string()))?;
        if r.rot != 0 {
            return Err(bad("bordered synthesis never rotates patches".to_string()));
        }
        if region == RegionTag::Corner {
            if !corner_pairs.iter().any(|&((sx, sy), (tx, ty))| {
                (sx, sy) == (r.sx, r.sy) && (tx, ty) == (r.tx, r.ty)
            }) {
                return Err(bad(format!("corner pair ({},{})->({},{})", r.sx, r.sy, r.tx, r.ty)));
            }
            continue;
        }
        let allowed = part.source_rect(region);
        let (fh, fw) = part.footprint(region);
        let inside = r.sx >= allowed.x0
            && r.sy >= allowed.y0
            && r.sx + fh <= allowed.x1
            && r.sy + fw <= allowed.y1;
        if !inside {
            return Err(bad(format!(
                "{} patch ({},{}) {}x{} outside rows [{},{}) cols [{},{})",
                region, r.sx, r.sy, fh, fw, allowed.x0, allowed.x1, allowed.y0, allowed.y1
            )));
        }
    }
    Ok(())
}
