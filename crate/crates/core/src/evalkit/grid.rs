use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ndcg_at_k, recall_at_k, EvalError, Judgments, QueryRecord};
use crate::corpus::{DocResolver, UnitKind};
use crate::lexindex::{Analyzer, Bm25Params, InvertedIndex};
use crate::pipeline::maxp_aggregate;

pub const DEFAULT_K1_GRID: &[f64] = &[0.5, 0.9, 2.0, 3.8, 6.0, 8.0, 10.0, 12.0];
pub const DEFAULT_B_GRID: &[f64] = &[0.0, 0.2, 0.4, 0.6, 0.75, 0.87, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridMetric {
    #[serde(rename = "recall@5")]
    RecallAt5,
    #[serde(rename = "ndcg@10")]
    NdcgAt10,
}

impl GridMetric {
    pub fn cutoff(self) -> usize {
        match self {
            GridMetric::RecallAt5 => 5,
            GridMetric::NdcgAt10 => 10,
        }
    }
}

impl fmt::Display for GridMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridMetric::RecallAt5 => "recall@5",
            GridMetric::NdcgAt10 => "ndcg@10",
        })
    }
}

impl FromStr for GridMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "recall@5" => Ok(Self::RecallAt5),
            "ndcg@10" => Ok(Self::NdcgAt10),
            other => Err(format!("unknown grid metric {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub k1_values: Vec<f64>,
    pub b_values: Vec<f64>,
    pub metric: GridMetric,
    pub unit_kind: UnitKind,
    /// Passages retrieved per query before Max-P; ignored for documents.
    pub passage_depth: usize,
}

impl GridSpec {
    pub fn new(metric: GridMetric, unit_kind: UnitKind) -> Self {
        Self {
            k1_values: DEFAULT_K1_GRID.to_vec(),
            b_values: DEFAULT_B_GRID.to_vec(),
            metric,
            unit_kind,
            passage_depth: 1000,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.k1_values.is_empty() || self.b_values.is_empty() {
            return Err(EvalError::InvalidGrid("k1 and b lists must be non-empty".into()));
        }
        for &k1 in &self.k1_values {
            for &b in &self.b_values {
                Bm25Params::new(k1, b).map_err(|e| EvalError::InvalidGrid(e.to_string()))?;
            }
        }
        if self.unit_kind == UnitKind::Passage && self.passage_depth < self.metric.cutoff() {
            return Err(EvalError::InvalidGrid("passage depth below metric cutoff".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub k1: f64,
    pub b: f64,
    pub value: f64,
    pub is_default: bool,
    pub is_best: bool,
}

impl GridCell {
    fn flag(&self) -> &'static str {
        match (self.is_default, self.is_best) {
            (true, true) => "default+best",
            (true, false) => "default",
            (false, true) => "best",
            (false, false) => "",
        }
    }
}

/// Cells in k1-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub metric: GridMetric,
    pub cells: Vec<GridCell>,
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

fn is_default(k1: f64, b: f64) -> bool {
    same(k1, Bm25Params::DEFAULT.k1) && same(b, Bm25Params::DEFAULT.b)
}

/// Evaluates every (k1, b) pair on the judged queries. Cells are computed in
/// parallel; the output does not depend on scheduling.
pub fn grid_search_bm25(
    index: &InvertedIndex,
    analyzer: &dyn Analyzer,
    spec: &GridSpec,
    queries: &[QueryRecord],
    judgments: &Judgments,
    resolver: &dyn DocResolver,
) -> Result<GridResult, EvalError> {
    spec.validate()?;
    let judged: Vec<(Vec<String>, &_)> = queries
        .iter()
        .map(|q| {
            let ev = judgments
                .evidence(&q.qid)
                .filter(|e| !e.is_empty())
                .ok_or_else(|| EvalError::NoJudgments(q.qid.clone()))?;
            Ok((analyzer.analyze(&q.text), ev))
        })
        .collect::<Result<_, EvalError>>()?;
    if judged.is_empty() {
        return Err(EvalError::InvalidGrid("no queries".into()));
    }
    let cutoff = spec.metric.cutoff();
    let depth = match index.unit_kind() {
        UnitKind::Document => cutoff,
        UnitKind::Passage => spec.passage_depth,
    };
    let pairs: Vec<(f64, f64)> = spec
        .k1_values
        .iter()
        .flat_map(|&k1| spec.b_values.iter().map(move |&b| (k1, b)))
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(k1, b)| {
            let params = Bm25Params::new(k1, b).expect("validated");
            let mut total = 0.0;
            for (terms, ev) in &judged {
                let mut ranked = index.search_terms(params, terms, depth);
                if index.unit_kind() == UnitKind::Passage {
                    // unresolvable ids fall back to themselves
                    ranked = maxp_aggregate(&ranked, &Fallback(resolver)).expect("fallback resolves all ids");
                }
                total += match spec.metric {
                    GridMetric::RecallAt5 => recall_at_k(&ranked, ev, cutoff),
                    GridMetric::NdcgAt10 => ndcg_at_k(&ranked, ev, cutoff),
                }
                .expect("evidence is non-empty");
            }
            total / judged.len() as f64
        })
        .collect();
    let best = values
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > values[best] { i } else { best });
    let cells = pairs
        .iter()
        .zip(&values)
        .enumerate()
        .map(|(i, (&(k1, b), &value))| GridCell {
            k1,
            b,
            value,
            is_default: is_default(k1, b),
            is_best: i == best,
        })
        .collect();
    Ok(GridResult {
        metric: spec.metric,
        cells,
    })
}

struct Fallback<'a>(&'a dyn DocResolver);

impl DocResolver for Fallback<'_> {
    fn doc_id_of(&self, unit_id: &str) -> Option<String> {
        Some(self.0.doc_id_of(unit_id).unwrap_or_else(|| unit_id.to_string()))
    }
}

pub const CSV_HEADER: &str = "k1,b,metric,value,flag";

impl GridResult {
    pub fn best(&self) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.is_best)
    }

    pub fn default_cell(&self) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.is_default)
    }

    pub fn get(&self, k1: f64, b: f64) -> Option<&GridCell> {
        self.cells.iter().find(|c| same(c.k1, k1) && same(c.b, b))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let _ = writeln!(out, "{},{},{},{:.6},{}", c.k1, c.b, self.metric, c.value, c.flag());
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == CSV_HEADER => {}
            other => return Err(format!("expected header {CSV_HEADER:?}, got {other:?}")),
        }
        let mut metric = None;
        let mut cells = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(format!("row {}: expected 5 fields", i + 1));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1));
            let m: GridMetric = f[2].parse()?;
            if *metric.get_or_insert(m) != m {
                return Err(format!("row {}: mixed metrics", i + 1));
            }
            cells.push(GridCell {
                k1: num(f[0])?,
                b: num(f[1])?,
                value: num(f[3])?,
                is_default: f[4].split('+').any(|x| x == "default"),
                is_best: f[4].split('+').any(|x| x == "best"),
            });
        }
        Ok(Self {
            metric: metric.ok_or("no rows")?,
            cells,
        })
    }

    fn axes(&self) -> (Vec<f64>, Vec<f64>) {
        let mut k1s: Vec<f64> = Vec::new();
        let mut bs: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !k1s.iter().any(|&x| same(x, c.k1)) {
                k1s.push(c.k1);
            }
            if !bs.iter().any(|&x| same(x, c.b)) {
                bs.push(c.b);
            }
        }
        k1s.sort_by(f64::total_cmp);
        bs.sort_by(f64::total_cmp);
        (k1s, bs)
    }

    /// Heatmap with k1 across and b down (largest b on top). The default
    /// cell carries a dot, the best cell a heavy outline.
    pub fn to_svg(&self) -> String {
        const CW: usize = 64;
        const CH: usize = 34;
        const LEFT: usize = 56;
        const TOP: usize = 40;
        let (k1s, bs) = self.axes();
        let (lo, hi) = self
            .cells
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                (lo.min(c.value), hi.max(c.value))
            });
        let width = LEFT + CW * k1s.len() + 16;
        let height = TOP + CH * bs.len() + 40;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{LEFT}" y="18" font-size="13">BM25 {} (dot: default, outline: best)</text>"#,
            self.metric
        );
        for (row, b) in bs.iter().rev().enumerate() {
            let y = TOP + row * CH;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{b}</text>"#,
                LEFT - 6,
                y + CH / 2 + 4
            );
            for (col, k1) in k1s.iter().enumerate() {
                let x = LEFT + col * CW;
                let Some(c) = self.get(*k1, *b) else { continue };
                let t = if hi > lo { (c.value - lo) / (hi - lo) } else { 0.5 };
                let (fill, ink) = ramp(t);
                let _ = writeln!(
                    s,
                    r#"<rect x="{x}" y="{y}" width="{CW}" height="{CH}" fill="{fill}" stroke="white"/>"#
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{:.3}</text>"#,
                    x + CW / 2,
                    y + CH / 2 + 4,
                    c.value
                );
                if c.is_default {
                    let _ = writeln!(s, r#"<circle cx="{}" cy="{}" r="3" fill="{ink}"/>"#, x + 7, y + 7);
                }
                if c.is_best {
                    let _ = writeln!(
                        s,
                        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black" stroke-width="3"/>"#,
                        x + 1,
                        y + 1,
                        CW - 2,
                        CH - 2
                    );
                }
            }
        }
        let base = TOP + CH * bs.len();
        for (col, k1) in k1s.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{k1}</text>"#,
                LEFT + col * CW + CW / 2,
                base + 16
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">k1</text>"#,
            LEFT + CW * k1s.len() / 2,
            base + 32
        );
        let _ = writeln!(s, r#"<text x="12" y="{}">b</text>"#, TOP + CH * bs.len() / 2);
        s.push_str("</svg>\n");
        s
    }
}

/// Dark blue to yellow; returns fill and a readable text colour.
fn ramp(t: f64) -> (String, &'static str) {
    const STOPS: [(f64, f64, f64); 4] = [
        (48.0, 18.0, 84.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let mix = |a: f64, b: f64| (a + (b - a) * f).round() as u8;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let rgb = (mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2));
    let ink = if t > 1.5 { "black" } else { "white" };
    (format!("#{:02x}{:02x}{:02x}", rgb.0, rgb.1, rgb.2), ink)
}
