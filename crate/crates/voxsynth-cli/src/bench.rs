//! Synthesis benchmark: times the combined-channel baseline against the
//! two-phase matcher at a ladder of output sizes and reports the speedup.

use std::time::Instant;

use voxsynth::column::ColumnImage;
use voxsynth::synthesis::{synthesize, Mode, SynthesisParams};
use voxsynth::Result;

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub size: usize,
    pub baseline_s: f64,
    pub two_phase_s: f64,
}

impl BenchRow {
    pub fn ratio(&self) -> f64 {
        self.baseline_s / self.two_phase_s
    }
}

fn time_mode(
    exemplar: &ColumnImage,
    size: usize,
    params: &SynthesisParams,
    mode: Mode,
    reps: usize,
) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        let (img, _) = synthesize(exemplar, (size, size), params, mode, None)?;
        let elapsed = start.elapsed().as_secs_f64();
        assert_eq!(img.dims(), (size, size));
        best = best.min(elapsed);
    }
    Ok(best)
}

/// Run both modes at each size; each cell is the best of `reps` runs and
/// covers the full synthesis call including match-structure construction.
pub fn run_bench(
    exemplar: &ColumnImage,
    sizes: &[usize],
    reps: usize,
    params: &SynthesisParams,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let baseline_s = time_mode(exemplar, size, params, Mode::Baseline, reps)?;
        let two_phase_s = time_mode(exemplar, size, params, Mode::TwoPhase, reps)?;
        rows.push(BenchRow { size, baseline_s, two_phase_s });
    }
    Ok(rows)
}

pub fn format_table(rows: &[BenchRow]) -> String {
    let mut out = String::from("size baseline_s two_phase_s ratio\n");
    for r in rows {
        out.push_str(&format!(
            "{} {:.4} {:.4} {:.2}\n",
            r.size,
            r.baseline_s,
            r.two_phase_s,
            r.ratio()
        ));
    }
    out
}

/// Parse a table produced by [`format_table`], ignoring the header.
pub fn parse_table(text: &str) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(voxsynth::Error::InvalidData(format!("bad bench row `{}`", line)));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| voxsynth::Error::InvalidData(format!("bad bench value `{}`", s)))
        };
        rows.push(BenchRow {
            size: num(parts[0])? as usize,
            baseline_s: num(parts[1])?,
            two_phase_s: num(parts[2])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::procgen::{generate, Kind, ProcSpec};

    #[test]
    fn bench_runs_and_round_trips_through_its_table() {
        let field = generate(&ProcSpec {
            kind: Kind::Grass,
            shape: (24, 24, 8),
            channels: 3,
            count: 10,
            radius: 0.0,
            seed: 3,
        })
        .unwrap();
        let exemplar = ColumnImage::flatten(&field);
        let params = SynthesisParams { w_p: 9, w_o: 3, ..SynthesisParams::default() };
        let rows = run_bench(&exemplar, &[20, 24], 1, &params).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.baseline_s > 0.0 && r.two_phase_s > 0.0);
        }
        let parsed = parse_table(&format_table(&rows)).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].size, 20);
        // Table cells carry four decimals, so parsed times match to 5e-5.
        assert!((parsed[1].baseline_s - rows[1].baseline_s).abs() < 5e-5);
        assert!((parsed[1].two_phase_s - rows[1].two_phase_s).abs() < 5e-5);
    }
}
