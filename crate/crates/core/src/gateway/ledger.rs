use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ModelResponse, PriceTable, Usage};
use crate::context::Feature;

/// Costs are rounded to this many decimal places of currency.
const COST_DECIMALS: i32 = 10;

/// Rounds a currency amount to the ledger's fixed precision.
pub fn round_cost(x: f64) -> f64 {
    let scale = 10f64.powi(COST_DECIMALS);
    (x * scale).round() / scale
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub feature: Feature,
    pub usage: Usage,
    pub latency_ms: u64,
    pub cost: f64,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub calls: usize,
    pub latency_ms: MeanStd,
    pub cost: MeanStd,
    pub input_tokens: MeanStd,
    pub output_tokens: MeanStd,
    pub total_cost: f64,
    pub total_input_tokens: u64,
    pub total_output_tokens: u64,
}

impl FeatureStats {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a UsageRecord>) -> Option<Self> {
        let records: Vec<&UsageRecord> = records.into_iter().collect();
        let col = |f: &dyn Fn(&UsageRecord) -> f64| records.iter().map(|r| f(r)).collect::<Vec<_>>();
        Some(Self {
            calls: records.len(),
            latency_ms: MeanStd::of(&col(&|r| r.latency_ms as f64))?,
            cost: MeanStd::of(&col(&|r| r.cost))?,
            input_tokens: MeanStd::of(&col(&|r| r.usage.input_tokens as f64))?,
            output_tokens: MeanStd::of(&col(&|r| r.usage.output_tokens as f64))?,
            total_cost: round_cost(records.iter().map(|r| r.cost).sum()),
            total_input_tokens: records.iter().map(|r| r.usage.input_tokens).sum(),
            total_output_tokens: records.iter().map(|r| r.usage.output_tokens).sum(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageLedger {
    pub price_table: PriceTable,
    pub records: Vec<UsageRecord>,
}

impl UsageLedger {
    pub fn new(price_table: PriceTable) -> Self {
        Self {
            price_table,
            records: Vec::new(),
        }
    }

    pub fn cost_of(&self, usage: Usage) -> f64 {
        round_cost(
            usage.input_tokens as f64 * self.price_table.per_input_token
                + usage.output_tokens as f64 * self.price_table.per_output_token,
        )
    }

    pub fn record_usage(&mut self, feature: Feature, response: &ModelResponse) -> UsageRecord {
        let record = UsageRecord {
            feature,
            usage: response.usage,
            latency_ms: response.latency_ms,
            cost: self.cost_of(response.usage),
        };
        self.records.push(record.clone());
        record
    }

    /// Per-feature means and standard deviations; features without calls
    /// are omitted.
    pub fn report(&self) -> BTreeMap<Feature, FeatureStats> {
        Feature::ALL
            .into_iter()
            .filter_map(|f| {
                FeatureStats::from_records(self.records.iter().filter(|r| r.feature == f))
                    .map(|s| (f, s))
            })
            .collect()
    }
}
