use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub strategy: String,
    pub classifier: String,
    pub rank1: f64,
    pub rank30: f64,
    pub eer: Option<f64>,
    pub report_hash: String,
}

/// Rank-1 / rank-30 accuracies laid out with one row per trained model and
/// one column per classifier.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StrategyGrid {
    pub cells: Vec<GridCell>,
}

fn first_seen<'a>(it: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for s in it {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

impl StrategyGrid {
    pub fn rows(&self) -> Vec<&str> {
        first_seen(self.cells.iter().map(|c| c.strategy.as_str()))
    }

    pub fn columns(&self) -> Vec<&str> {
        first_seen(self.cells.iter().map(|c| c.classifier.as_str()))
    }

    pub fn get(&self, strategy: &str, classifier: &str) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.strategy == strategy && c.classifier == classifier)
    }

    /// Markdown table; cells read `rank-1 / rank-30` in percent.
    pub fn to_markdown(&self) -> String {
        let cols = self.columns();
        let mut s = String::from("| strategy |");
        for c in &cols {
            let _ = write!(s, " {c} |");
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(cols.len()));
        s.push('\n');
        for r in self.rows() {
            let _ = write!(s, "| {r} |");
            for c in &cols {
                match self.get(r, c) {
                    Some(g) => {
                        let _ = write!(s, " {:.2} / {:.2} |", 100.0 * g.rank1, 100.0 * g.rank30);
                    }
                    None => s.push_str(" - |"),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("strategy,classifier,rank1,rank30,eer\n");
        for c in &self.cells {
            let eer = c.eer.map(|e| e.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", c.strategy, c.classifier, c.rank1, c.rank30, eer);
        }
        s
    }
}
