use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, PolicyTag, SubgraphBag};
use crate::io::write_atomic;

/// Sequential ramp, lightest first.
pub const COLOR_RAMP: [&str; 10] = [
    "#fff5eb", "#fee6ce", "#fdd0a2", "#fdae6b", "#fd8d3c", "#f16913", "#d94801", "#a63603",
    "#7f2704", "#4a1a04",
];

/// Per-edge frequency of appearance across a bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationHeatmap {
    pub graph_id: usize,
    pub policy: PolicyTag,
    pub num_nodes: usize,
    /// `[i, j, weight]` per undirected edge, in canonical edge order.
    pub edges: Vec<(usize, usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motif_edges: Option<Vec<usize>>,
}

impl ExplanationHeatmap {
    pub fn weights(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.2).collect()
    }

    /// Mean weight over ground-truth edges and over all other edges.
    pub fn motif_background_means(&self) -> Option<(f64, f64)> {
        let motif = self.motif_edges.as_ref()?;
        let (mut ms, mut mc, mut bs, mut bc) = (0.0, 0, 0.0, 0);
        for (k, e) in self.edges.iter().enumerate() {
            if motif.contains(&k) {
                ms += e.2;
                mc += 1;
            } else {
                bs += e.2;
                bc += 1;
            }
        }
        let mean = |s: f64, c: usize| if c == 0 { 0.0 } else { s / c as f64 };
        Some((mean(ms, mc), mean(bs, bc)))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `weight_k = (Σ_j e_k^{(j)}) / m`.
pub fn aggregate_heatmap(bag: &SubgraphBag, g: &Graph) -> Result<ExplanationHeatmap> {
    if bag.is_empty() {
        return Err(Error::Data(format!("empty bag for graph {}", bag.graph_id)));
    }
    bag.check_base(g)?;
    let m = bag.len() as f64;
    let edges = g
        .edges()
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let c = bag.masks.iter().filter(|mask| mask.bits[k]).count();
            (i, j, c as f64 / m)
        })
        .collect();
    Ok(ExplanationHeatmap {
        graph_id: bag.graph_id,
        policy: bag.policy,
        num_nodes: g.num_nodes(),
        edges,
        motif_edges: g.motif_edges().map(<[usize]>::to_vec),
    })
}

pub fn penwidth_for(w: f64) -> f64 {
    1.0 + 4.0 * w
}

pub fn color_for(w: f64) -> &'static str {
    let idx = (10.0 * w.clamp(0.0, 1.0)).floor() as usize;
    COLOR_RAMP[idx.min(9)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    Json,
    Dot,
    Svg,
}

impl HeatmapFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Json => "json",
            Self::Dot => "dot",
            Self::Svg => "svg",
        }
    }
}

impl FromStr for HeatmapFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "dot" => Ok(Self::Dot),
            "svg" => Ok(Self::Svg),
            _ => Err(Error::arg(format!(
                "unknown heatmap format {s:?} (json, dot, svg)"
            ))),
        }
    }
}

fn is_motif(h: &ExplanationHeatmap, k: usize) -> bool {
    h.motif_edges.as_ref().is_some_and(|m| m.contains(&k))
}

pub(crate) fn render_dot(h: &ExplanationHeatmap) -> String {
    let mut s = String::new();
    writeln!(s, "graph heatmap_{} {{", h.graph_id).unwrap();
    writeln!(s, "  node [shape=circle, fontsize=10];").unwrap();
    for v in 0..h.num_nodes {
        writeln!(s, "  {v};").unwrap();
    }
    for (k, &(i, j, w)) in h.edges.iter().enumerate() {
        let color = color_for(w);
        // A black:fill:black list draws the edge with an outline.
        let color = if is_motif(h, k) {
            format!("#000000:{color}:#000000")
        } else {
            color.to_string()
        };
        writeln!(
            s,
            "  {i} -- {j} [penwidth={:.3}, color=\"{color}\", weight={w:.6}];",
            penwidth_for(w)
        )
        .unwrap();
    }
    s.push_str("}\n");
    s
}

pub(crate) fn render_svg(h: &ExplanationHeatmap) -> String {
    const SIZE: f64 = 480.0;
    let c = SIZE / 2.0;
    let r = SIZE / 2.0 - 30.0;
    let pos = |v: usize| {
        let a = 2.0 * std::f64::consts::PI * v as f64 / h.num_nodes.max(1) as f64;
        (c + r * a.cos(), c + r * a.sin())
    };
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for (k, &(i, j, w)) in h.edges.iter().enumerate() {
        let ((x1, y1), (x2, y2)) = (pos(i), pos(j));
        if is_motif(h, k) {
            writeln!(
                s,
                r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="black" stroke-width="{:.3}"/>"#,
                penwidth_for(w) + 2.0
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{}" stroke-width="{:.3}"><title>{i}-{j}: {w:.3}</title></line>"#,
            color_for(w),
            penwidth_for(w)
        )
        .unwrap();
    }
    for v in 0..h.num_nodes {
        let (x, y) = pos(v);
        writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="9" fill="white" stroke="black"/><text x="{x:.2}" y="{:.2}" font-size="9" text-anchor="middle">{v}</text>"#,
            y + 3.0
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

pub fn export_heatmap(h: &ExplanationHeatmap, format: HeatmapFormat, path: &Path) -> Result<()> {
    let body = match format {
        HeatmapFormat::Json => h.to_json()?,
        HeatmapFormat::Dot => render_dot(h),
        HeatmapFormat::Svg => render_svg(h),
    };
    write_atomic(path, body.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeMask;

    fn path4() -> Graph {
        Graph::unlabeled(4, [(0, 1), (1, 2), (2, 3)], 0).unwrap()
    }

    #[test]
    fn counts_over_bag_size() {
        let g = Graph::unlabeled(2, [(0, 1)], 0).unwrap();
        let masks = (0..10).map(|j| EdgeMask::from_bits(vec![j < 3])).collect();
        let bag = SubgraphBag::new(0, &g, PolicyTag::ExplainNoise, masks).unwrap();
        assert_eq!(aggregate_heatmap(&bag, &g).unwrap().weights(), vec![0.3]);
    }

    #[test]
    fn identical_masks_give_binary_weights() {
        let g = path4();
        let mask = EdgeMask::from_bits(vec![true, false, true]);
        let bag = SubgraphBag::new(0, &g, PolicyTag::ExplainNoise, vec![mask; 4]).unwrap();
        assert_eq!(
            aggregate_heatmap(&bag, &g).unwrap().weights(),
            vec![1.0, 0.0, 1.0]
        );
    }

    #[test]
    fn ramp_and_width() {
        assert_eq!(penwidth_for(0.0), 1.0);
        assert_eq!(penwidth_for(1.0), 5.0);
        assert_eq!(color_for(0.0), COLOR_RAMP[0]);
        assert_eq!(color_for(1.0), COLOR_RAMP[9]);
        assert_eq!(color_for(0.95), COLOR_RAMP[9]);
        assert_eq!(color_for(0.1), COLOR_RAMP[1]);
    }

    #[test]
    fn dot_and_svg_mark_motif() {
        let g = path4().with_motif_edges(vec![1]).unwrap();
        let bag = SubgraphBag::full(3, &g);
        let h = aggregate_heatmap(&bag, &g).unwrap();
        let dot = render_dot(&h);
        assert!(dot.contains("1 -- 2 [penwidth=5.000, color=\"#000000:#4a1a04:#000000\""));
        assert!(dot.contains("0 -- 1 [penwidth=5.000, color=\"#4a1a04\""));
        let svg = render_svg(&h);
        assert_eq!(svg.matches("stroke=\"black\" stroke-width").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 4);
    }

    #[test]
    fn format_parsing() {
        assert_eq!("SVG".parse::<HeatmapFormat>().unwrap(), HeatmapFormat::Svg);
        assert!("png".parse::<HeatmapFormat>().is_err());
    }
}
