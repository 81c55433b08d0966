//! Per-variable selection and bit-count metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::encoder::full_encoding_bits;
use crate::pscs::CandidateList;
use crate::split::optimize_split;
use crate::varset::VarSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub n: usize,
    pub omega: usize,
    pub lambda: usize,
    /// `Ω / Λ`.
    pub efficiency: f64,
    pub log2_lambda: f64,
    pub seconds: f64,
    /// Size of the union of all candidates.
    pub ground_size: usize,
    /// `Λ − 1`.
    pub basic_bits: usize,
    /// `Λ^(k) − 2` for each requested budget, in budget order.
    pub split_bits: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub num_variables: usize,
    pub budgets: Vec<usize>,
    /// Largest candidate size, used as the in-degree bound of the full encoding.
    pub max_parents: usize,
    pub order_bits: usize,
    /// `Σ (Λ − 1) + C(N,2)`.
    pub basic_total: usize,
    /// `Σ (Λ^(k) − 2) + C(N,2)` per budget.
    pub split_totals: Vec<usize>,
    pub full_encoding_bits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rows: Vec<MetricsRow>,
    pub summary: MetricsSummary,
}

pub fn compute_metrics(lists: &[CandidateList], budgets: &[usize]) -> Metrics {
    let rows: Vec<MetricsRow> = lists
        .iter()
        .map(|l| {
            let family: Vec<VarSet> = l.family.iter().map(|m| m.set.clone()).collect();
            let lambda = l.lambda();
            MetricsRow {
                n: l.target,
                omega: l.omega(),
                lambda,
                efficiency: l.omega() as f64 / lambda as f64,
                log2_lambda: (lambda as f64).log2(),
                seconds: l.stats.train_seconds,
                ground_size: l.ground_set().len(),
                basic_bits: lambda - 1,
                split_bits: budgets
                    .iter()
                    .map(|&k| optimize_split(l.target, &family, k).bits())
                    .collect(),
            }
        })
        .collect();
    let n = lists.len();
    let order_bits = n * n.saturating_sub(1) / 2;
    let max_parents = lists
        .iter()
        .flat_map(|l| l.family.iter().map(|m| m.set.len()))
        .max()
        .unwrap_or(0);
    let summary = MetricsSummary {
        num_variables: n,
        budgets: budgets.to_vec(),
        max_parents,
        order_bits,
        basic_total: rows.iter().map(|r| r.basic_bits).sum::<usize>() + order_bits,
        split_totals: (0..budgets.len())
            .map(|i| rows.iter().map(|r| r.split_bits[i]).sum::<usize>() + order_bits)
            .collect(),
        full_encoding_bits: full_encoding_bits(n, max_parents),
    };
    Metrics { rows, summary }
}

impl Metrics {
    /// One row per variable; the full-encoding reference repeats on every row.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "n",
            "omega",
            "lambda",
            "efficiency",
            "log2_lambda",
            "seconds",
            "ground_size",
            "basic_bits",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(
            self.summary
                .budgets
                .iter()
                .map(|k| format!("split_bits_k{k}")),
        );
        header.push("full_encoding_bits".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.n.to_string(),
                r.omega.to_string(),
                r.lambda.to_string(),
                r.efficiency.to_string(),
                r.log2_lambda.to_string(),
                r.seconds.to_string(),
                r.ground_size.to_string(),
                r.basic_bits.to_string(),
            ];
            rec.extend(r.split_bits.iter().map(|b| b.to_string()));
            rec.push(self.summary.full_encoding_bits.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
