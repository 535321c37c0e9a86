//! Seed-averaged accuracy curves from a comparison file.

use std::collections::{BTreeMap, HashSet};

use lltc_core::edgesim::REPORT_COLUMNS;

use crate::CliError;

pub const CURVE_COLUMNS: [&str; 7] = ["table", "strategy", "round", "x", "mean_accuracy", "std_accuracy", "seeds"];

/// The comparison columns the curves need.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub strategy: String,
    pub seed: u64,
    pub round: usize,
    pub test_accuracy: f64,
    pub cum_bytes_up: u64,
    pub cum_items_collected: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CurveTable {
    /// x = cumulative bytes offloaded.
    Traffic,
    /// x = cumulative unlabeled items collected.
    Pool,
}

impl CurveTable {
    pub fn as_str(self) -> &'static str {
        match self {
            CurveTable::Traffic => "traffic",
            CurveTable::Pool => "pool",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub table: CurveTable,
    pub strategy: String,
    pub round: usize,
    /// Mean over seeds.
    pub x: f64,
    pub mean_accuracy: f64,
    /// Population standard deviation over seeds.
    pub std_accuracy: f64,
    pub seeds: usize,
}

fn column(name: &str) -> usize {
    REPORT_COLUMNS.iter().position(|c| *c == name).expect("known column")
}

pub fn parse_comparison(text: &str, file: &str) -> Result<Vec<ComparisonRow>, CliError> {
    let bad = |line: usize, field: &str, message: String| CliError::Input {
        file: file.to_string(),
        line,
        field: field.to_string(),
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let header = lines.next().map(|(_, l)| l).unwrap_or_default();
    if header != REPORT_COLUMNS.join(",") {
        return Err(bad(1, "header", format!("expected `{}`", REPORT_COLUMNS.join(","))));
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (line, text) in lines {
        let cells: Vec<&str> = text.split(',').collect();
        if cells.len() != REPORT_COLUMNS.len() {
            return Err(bad(
                line,
                "row",
                format!("expected {} columns, got {}", REPORT_COLUMNS.len(), cells.len()),
            ));
        }
        fn num<T: std::str::FromStr>(
            cells: &[&str],
            name: &'static str,
            line: usize,
            bad: &dyn Fn(usize, &str, String) -> CliError,
        ) -> Result<T, CliError> {
            let raw = cells[column(name)];
            raw.parse().map_err(|_| bad(line, name, format!("cannot parse `{raw}`")))
        }
        let row = ComparisonRow {
            strategy: cells[column("strategy")].to_string(),
            seed: num(&cells, "seed", line, &bad)?,
            round: num(&cells, "round", line, &bad)?,
            test_accuracy: num(&cells, "test_accuracy", line, &bad)?,
            cum_bytes_up: num(&cells, "cum_bytes_up", line, &bad)?,
            cum_items_collected: num(&cells, "cum_items_collected", line, &bad)?,
        };
        if row.strategy.is_empty() {
            return Err(bad(line, "strategy", "empty".into()));
        }
        if !(0.0..=1.0).contains(&row.test_accuracy) {
            return Err(bad(line, "test_accuracy", format!("{} outside [0, 1]", row.test_accuracy)));
        }
        if !seen.insert((row.strategy.clone(), row.seed, row.round)) {
            return Err(bad(
                line,
                "round",
                format!("duplicate ({}, {}, {})", row.strategy, row.seed, row.round),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups rows by (strategy, round) and averages over seeds. Strategies keep
/// their first-appearance order; rows within a strategy are sorted by x.
pub fn aggregate(rows: &[ComparisonRow]) -> Vec<CurvePoint> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<&ComparisonRow>> = BTreeMap::new();
    for r in rows {
        let idx = match order.iter().position(|s| *s == r.strategy) {
            Some(i) => i,
            None => {
                order.push(&r.strategy);
                order.len() - 1
            }
        };
        groups.entry((idx, r.round)).or_default().push(r);
    }
    let mut out = Vec::new();
    for table in [CurveTable::Traffic, CurveTable::Pool] {
        let mut points: Vec<(usize, CurvePoint)> = groups
            .iter()
            .map(|(&(idx, round), members)| {
                let accs: Vec<f64> = members.iter().map(|r| r.test_accuracy).collect();
                let xs: Vec<f64> = members
                    .iter()
                    .map(|r| match table {
                        CurveTable::Traffic => r.cum_bytes_up as f64,
                        CurveTable::Pool => r.cum_items_collected as f64,
                    })
                    .collect();
                let (mean_accuracy, std_accuracy) = mean_std(&accs);
                let point = CurvePoint {
                    table,
                    strategy: order[idx].to_string(),
                    round,
                    x: mean_std(&xs).0,
                    mean_accuracy,
                    std_accuracy,
                    seeds: members.len(),
                };
                (idx, point)
            })
            .collect();
        points.sort_by(|(ia, a), (ib, b)| ia.cmp(ib).then(a.x.total_cmp(&b.x)).then(a.round.cmp(&b.round)));
        out.extend(points.into_iter().map(|(_, p)| p));
    }
    out
}

pub fn to_csv(points: &[CurvePoint]) -> String {
    let mut out = CURVE_COLUMNS.join(",");
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.table.as_str(),
            p.strategy,
            p.round,
            p.x,
            p.mean_accuracy,
            p.std_accuracy,
            p.seeds
        ));
    }
    out
}
