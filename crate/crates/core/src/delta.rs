//! Fine-tuning delta analysis: row-level mean-absolute-value statistics of
//! `W_delta = W_ft − W_pre`, fraction-above-threshold heatmap grids, and the
//! inverse-average-MAV expert weights used by weighted souping.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chunks::byte_chunks;
use crate::error::{Error, Result};
use crate::store::{require_compat, TensorSource};
use crate::topology::{NamingScheme, ParamKind, ParamLocus};

/// Threshold used for the bundled language-expert visualization preset.
pub const THRESHOLD_PRESET_LANG: f32 = 1.9e-5;
/// Threshold used for the bundled task-expert visualization preset.
pub const THRESHOLD_PRESET_TASK: f32 = 1.0e-5;

/// Per-row MAVs of one tensor's delta. Rank-2 tensors carry one value per
/// row; rank-1 tensors carry a single value spanning the vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMavs {
    pub name: String,
    pub locus: ParamLocus,
    pub values: Vec<f32>,
    /// Whether the tensor is rank 2 (grid-eligible) rather than rank 1.
    pub rank2: bool,
}

/// Row MAVs for every rank-1/rank-2 tensor of a delta, plus the aggregate
/// mean over all rows (the quantity inverted by [`expert_weight`]).
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaStats {
    /// Per-tensor row MAVs, lexicographic by tensor name.
    pub tensors: Vec<RowMavs>,
    /// Names of tensors skipped because their rank is outside {1, 2}.
    pub skipped: Vec<String>,
    pub total_rows: usize,
    /// Mean of all MAV values across all rows of all tensors.
    pub aggregate: f32,
}

impl DeltaStats {
    /// Recomputes the aggregate from parts; equals `self.aggregate`.
    pub fn recompute_aggregate(&self) -> f32 {
        let sum: f64 = self
            .tensors
            .iter()
            .flat_map(|t| t.values.iter())
            .map(|&v| v as f64)
            .sum();
        if self.total_rows == 0 {
            0.0
        } else {
            (sum / self.total_rows as f64) as f32
        }
    }
}

/// Computes per-row MAVs of `ft − pre` in FLOAT32 (f64 accumulation inside
/// each row). Tensors of rank outside {1, 2} are skipped and listed.
pub fn delta_row_mavs(
    pre: &dyn TensorSource,
    ft: &dyn TensorSource,
    scheme: &NamingScheme,
) -> Result<DeltaStats> {
    require_compat(pre, ft)?;

    let mut tensors = Vec::new();
    let mut skipped = Vec::new();
    let mut total_rows = 0usize;
    let mut sum = 0f64;

    let mut buf_pre = Vec::new();
    let mut buf_ft = Vec::new();

    for name in pre.names() {
        let info = pre.info(&name).expect("name from index");
        let Some((rows, row_elems)) = info.rows() else {
            skipped.push(name);
            continue;
        };
        let locus = scheme.classify(&name)?;
        let mut values = Vec::with_capacity(rows);
        let row_bytes = row_elems * info.dtype.size();

        for range in byte_chunks(&info) {
            let len = (range.end - range.start) as usize;
            buf_pre.resize(len, 0);
            buf_ft.resize(len, 0);
            pre.read_range(&name, range.start, &mut buf_pre)?;
            ft.read_range(&name, range.start, &mut buf_ft)?;
            let vp = info.dtype.decode_f32(&buf_pre);
            let vf = info.dtype.decode_f32(&buf_ft);
            debug_assert_eq!(len % row_bytes.max(1), 0);
            for row in 0..len / row_bytes.max(1) {
                let start = row * row_elems;
                let mut acc = 0f64;
                for i in start..start + row_elems {
                    acc += (vf[i] as f64 - vp[i] as f64).abs();
                }
                values.push((acc / row_elems as f64) as f32);
            }
        }
        // Rows without elements ([0], [n, 0]) get a MAV of 0 by convention.
        if row_elems == 0 {
            values = vec![0.0; rows];
        }

        total_rows += values.len();
        sum += values.iter().map(|&v| v as f64).sum::<f64>();
        tensors.push(RowMavs {
            name,
            locus,
            values,
            rank2: info.rank() == 2,
        });
    }

    let aggregate = if total_rows == 0 {
        0.0
    } else {
        (sum / total_rows as f64) as f32
    };
    Ok(DeltaStats {
        tensors,
        skipped,
        total_rows,
        aggregate,
    })
}

/// Inverse of the aggregate row MAV. Undefined (error) when the delta is
/// identically zero.
pub fn expert_weight(stats: &DeltaStats) -> Result<f32> {
    if stats.total_rows == 0 || stats.aggregate <= 0.0 {
        return Err(Error::UndefinedWeight);
    }
    Ok(1.0 / stats.aggregate)
}

/// Nearest-rank percentile of all row MAVs, for picking a threshold when no
/// explicit value is given. `p` in [0, 100].
pub fn percentile_threshold(stats: &DeltaStats, p: f64) -> Result<f32> {
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidConfig(format!(
            "percentile {p} outside [0, 100]"
        )));
    }
    let mut all: Vec<f32> = stats
        .tensors
        .iter()
        .flat_map(|t| t.values.iter().copied())
        .collect();
    if all.is_empty() {
        return Err(Error::InvalidConfig("no rows to take a percentile of".into()));
    }
    all.sort_by(f32::total_cmp);
    let rank = ((p / 100.0) * all.len() as f64).ceil() as usize;
    Ok(all[rank.clamp(1, all.len()) - 1])
}

/// Fraction-above-threshold grid over (layer, grid kind) cells.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub layer_count: usize,
    pub threshold: f32,
    /// Fraction of rows with MAV strictly above the threshold, per cell.
    pub cells: BTreeMap<(usize, ParamKind), f32>,
    /// Grid cells with no contributing rank-2 tensor.
    pub missing: Vec<(usize, ParamKind)>,
}

/// Builds the grid from delta statistics: each cell is the fraction of rows
/// whose MAV exceeds `threshold` (strict). Rank-1 tensors and non-grid
/// kinds are excluded, matching the 7-column layout.
pub fn heatmap(stats: &DeltaStats, threshold: f32, layer_count: usize) -> Result<HeatmapGrid> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "threshold must be non-negative, got {threshold}"
        )));
    }
    let mut above: BTreeMap<(usize, ParamKind), (usize, usize)> = BTreeMap::new();
    for t in &stats.tensors {
        if !t.rank2 || !t.locus.kind.is_grid() {
            continue;
        }
        let Some(layer) = t.locus.layer else { continue };
        if layer >= layer_count {
            return Err(Error::LayerOutOfRange {
                layer,
                count: layer_count,
            });
        }
        let cell = above.entry((layer, t.locus.kind)).or_default();
        cell.0 += t.values.iter().filter(|&&v| v > threshold).count();
        cell.1 += t.values.len();
    }

    let mut cells = BTreeMap::new();
    let mut missing = Vec::new();
    for layer in 0..layer_count {
        for kind in ParamKind::GRID {
            match above.get(&(layer, kind)) {
                Some(&(hits, rows)) if rows > 0 => {
                    cells.insert((layer, kind), hits as f32 / rows as f32);
                }
                _ => missing.push((layer, kind)),
            }
        }
    }
    Ok(HeatmapGrid {
        layer_count,
        threshold,
        cells,
        missing,
    })
}

// ── Exports ─────────────────────────────────────────────────────────────

/// Export format for a heatmap grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
    Svg,
}

impl ExportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            "svg" => Ok(ExportFormat::Svg),
            other => Err(Error::InvalidConfig(format!("unknown export format {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonCell {
    layer: usize,
    kind: ParamKind,
    fraction: f32,
}

#[derive(Serialize, Deserialize)]
struct JsonGrid {
    #[serde(rename = "L")]
    layer_count: usize,
    threshold: f32,
    cells: Vec<JsonCell>,
    missing: Vec<(usize, ParamKind)>,
}

/// CSV rendering: header `layer,Wq,Wk,Wv,Wo,W1,W3,W2`, one line per layer
/// with the bottom layer last (top-to-bottom like the figure), fractions
/// with six decimal places, missing cells left empty.
pub fn heatmap_to_csv(grid: &HeatmapGrid) -> String {
    let mut out = String::from("layer,Wq,Wk,Wv,Wo,W1,W3,W2\n");
    for layer in (0..grid.layer_count).rev() {
        out.push_str(&layer.to_string());
        for kind in ParamKind::GRID {
            out.push(',');
            if let Some(f) = grid.cells.get(&(layer, kind)) {
                out.push_str(&format!("{f:.6}"));
            }
        }
        out.push('\n');
    }
    out
}

pub fn heatmap_to_json(grid: &HeatmapGrid) -> String {
    let cells = grid
        .cells
        .iter()
        .map(|(&(layer, kind), &fraction)| JsonCell {
            layer,
            kind,
            fraction,
        })
        .collect();
    let json = JsonGrid {
        layer_count: grid.layer_count,
        threshold: grid.threshold,
        cells,
        missing: grid.missing.clone(),
    };
    serde_json::to_string_pretty(&json).expect("grid serializes")
}

pub fn heatmap_from_json(text: &str) -> Result<HeatmapGrid> {
    let json: JsonGrid = serde_json::from_str(text)
        .map_err(|e| Error::InvalidConfig(format!("bad heatmap JSON: {e}")))?;
    Ok(HeatmapGrid {
        layer_count: json.layer_count,
        threshold: json.threshold,
        cells: json
            .cells
            .into_iter()
            .map(|c| ((c.layer, c.kind), c.fraction))
            .collect(),
        missing: json.missing,
    })
}

/// Monotone white-to-green fill ramp; every channel decreases as the
/// fraction grows, so darker means more rows above threshold.
pub fn ramp_color(fraction: f32) -> (u8, u8, u8) {
    let f = fraction.clamp(0.0, 1.0);
    let r = (255.0 * (1.0 - f)).round() as u8;
    let g = (255.0 - 155.0 * f).round() as u8;
    let b = (255.0 * (1.0 - f)).round() as u8;
    (r, g, b)
}

/// Self-contained SVG: an L×7 rectangle grid with layer 0 at the bottom,
/// column labels on top and layer indices on the left. Missing cells are
/// drawn as outlines.
pub fn heatmap_to_svg(grid: &HeatmapGrid) -> String {
    const CELL: usize = 22;
    const PAD_LEFT: usize = 34;
    const PAD_TOP: usize = 22;
    let width = PAD_LEFT + 7 * CELL + 6;
    let height = PAD_TOP + grid.layer_count * CELL + 6;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"10\">\n"
    );
    svg.push_str(&format!(
        "  <title>rows above threshold {:e}</title>\n",
        grid.threshold
    ));
    for (col, kind) in ParamKind::GRID.iter().enumerate() {
        let x = PAD_LEFT + col * CELL + CELL / 2;
        svg.push_str(&format!(
            "  <text x=\"{x}\" y=\"14\" text-anchor=\"middle\">{}</text>\n",
            kind.column_label()
        ));
    }
    for layer in 0..grid.layer_count {
        // Bottom-up: layer 0 renders on the lowest row.
        let y = PAD_TOP + (grid.layer_count - 1 - layer) * CELL;
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{layer}</text>\n",
            PAD_LEFT - 6,
            y + CELL / 2 + 4
        ));
        for (col, kind) in ParamKind::GRID.iter().enumerate() {
            let x = PAD_LEFT + col * CELL;
            match grid.cells.get(&(layer, *kind)) {
                Some(&f) => {
                    let (r, g, b) = ramp_color(f);
                    svg.push_str(&format!(
                        "  <rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" \
                         fill=\"rgb({r},{g},{b})\" stroke=\"#777\"><title>layer {layer} {}: {f:.6}</title></rect>\n",
                        kind.column_label()
                    ));
                }
                None => {
                    svg.push_str(&format!(
                        "  <rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" \
                         fill=\"none\" stroke=\"#bbb\" stroke-dasharray=\"2,2\"/>\n"
                    ));
                }
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Renders and writes a grid export atomically (temp file + rename).
pub fn export_heatmap(grid: &HeatmapGrid, format: ExportFormat, path: impl AsRef<Path>) -> Result<()> {
    let body = match format {
        ExportFormat::Csv => heatmap_to_csv(grid),
        ExportFormat::Json => heatmap_to_json(grid),
        ExportFormat::Svg => heatmap_to_svg(grid),
    };
    atomic_write(path.as_ref(), body.as_bytes())
}

/// Writes bytes to a temp file in the target directory and renames it into
/// place, so interrupted exports never leave partial output.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(dir) => tempfile::NamedTempFile::new_in(dir)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{Checkpoint, DType, TensorRecord};

    fn pair(values_pre: &[f32], values_ft: &[f32], shape: Vec<usize>) -> (Checkpoint, Checkpoint) {
        let name = "model.layers.0.self_attn.q_proj.weight";
        let mut pre = Checkpoint::new();
        pre.insert(TensorRecord::from_f32(name, DType::F32, shape.clone(), values_pre).unwrap());
        let mut ft = Checkpoint::new();
        ft.insert(TensorRecord::from_f32(name, DType::F32, shape, values_ft).unwrap());
        (pre, ft)
    }

    #[test]
    fn zero_delta_has_zero_mavs() {
        let (pre, ft) = pair(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0], vec![2, 2]);
        let stats = delta_row_mavs(&pre, &ft, &NamingScheme::default()).unwrap();
        assert_eq!(stats.tensors[0].values, vec![0.0, 0.0]);
        assert_eq!(stats.aggregate, 0.0);
        assert!(matches!(expert_weight(&stats), Err(Error::UndefinedWeight)));
    }

    #[test]
    fn row_mavs_match_hand_example() {
        // delta rows [[1,−2,3],[0,0,0]] → MAVs [2.0, 0.0]
        let (pre, ft) = pair(
            &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            &[1.0, -2.0, 3.0, 0.0, 0.0, 0.0],
            vec![2, 3],
        );
        let stats = delta_row_mavs(&pre, &ft, &NamingScheme::default()).unwrap();
        assert_eq!(stats.tensors[0].values, vec![2.0, 0.0]);
        assert_eq!(stats.total_rows, 2);
        assert_eq!(stats.aggregate, 1.0);
        assert_eq!(expert_weight(&stats).unwrap(), 1.0);
    }

    #[test]
    fn rank1_tensor_is_one_row() {
        let (pre, ft) = pair(&[0.0, 0.0], &[0.5, -0.5], vec![2]);
        let stats = delta_row_mavs(&pre, &ft, &NamingScheme::default()).unwrap();
        assert_eq!(stats.tensors[0].values, vec![0.5]);
        assert!(!stats.tensors[0].rank2);
    }

    #[test]
    fn rank3_tensor_is_skipped_and_listed() {
        let (pre, ft) = pair(&[0.0; 8], &[1.0; 8], vec![2, 2, 2]);
        let stats = delta_row_mavs(&pre, &ft, &NamingScheme::default()).unwrap();
        assert!(stats.tensors.is_empty());
        assert_eq!(stats.skipped.len(), 1);
        assert_eq!(stats.total_rows, 0);
    }

    #[test]
    fn heatmap_counts_strictly_above() {
        let (pre, ft) = pair(
            &[0.0, 0.0, 0.0, 0.0],
            &[1.0, 1.0, 2.0, 2.0], // row MAVs 1.0 and 2.0
            vec![2, 2],
        );
        let stats = delta_row_mavs(&pre, &ft, &NamingScheme::default()).unwrap();
        let grid = heatmap(&stats, 1.0, 1).unwrap();
        // MAV 1.0 is not "> 1.0"; only the 2.0 row counts.
        assert_eq!(grid.cells[&(0, ParamKind::AttnQ)], 0.5);
        let grid0 = heatmap(&stats, 0.0, 1).unwrap();
        assert_eq!(grid0.cells[&(0, ParamKind::AttnQ)], 1.0);
        assert_eq!(grid.missing.len(), 6);
    }

    #[test]
    fn csv_layout_is_top_down() {
        let mut cells = BTreeMap::new();
        for layer in 0..2 {
            for kind in ParamKind::GRID {
                cells.insert((layer, kind), layer as f32);
            }
        }
        let grid = HeatmapGrid {
            layer_count: 2,
            threshold: 0.5,
            cells,
            missing: vec![],
        };
        let csv = heatmap_to_csv(&grid);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "layer,Wq,Wk,Wv,Wo,W1,W3,W2");
        assert!(lines[1].starts_with("1,1.000000"));
        assert!(lines[2].starts_with("0,0.000000"));
    }

    #[test]
    fn json_roundtrip_preserves_grid() {
        let mut cells = BTreeMap::new();
        cells.insert((0, ParamKind::AttnQ), 0.25f32);
        let grid = HeatmapGrid {
            layer_count: 1,
            threshold: 1.9e-5,
            cells,
            missing: vec![(0, ParamKind::FfnW2)],
        };
        let back = heatmap_from_json(&heatmap_to_json(&grid)).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn ramp_is_monotone() {
        let lum = |f: f32| {
            let (r, g, b) = ramp_color(f);
            r as u32 + g as u32 + b as u32
        };
        assert!(lum(0.0) > lum(0.5));
        assert!(lum(0.5) > lum(1.0));
    }

    #[test]
    fn percentile_is_nearest_rank() {
        let stats = DeltaStats {
            tensors: vec![RowMavs {
                name: "t".into(),
                locus: ParamLocus::NON_LAYER,
                values: vec![0.1, 0.4, 0.2, 0.3],
                rank2: true,
            }],
            skipped: vec![],
            total_rows: 4,
            aggregate: 0.25,
        };
        assert_eq!(percentile_threshold(&stats, 50.0).unwrap(), 0.2);
        assert_eq!(percentile_threshold(&stats, 100.0).unwrap(), 0.4);
        assert_eq!(percentile_threshold(&stats, 0.0).unwrap(), 0.1);
    }
}
