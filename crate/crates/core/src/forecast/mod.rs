//! Day-of-year price forecaster and the trading rule built on it.
//!
//! A [`MoeModel`] embeds the day (table lookup or soliton embedding), gates
//! the embedding to the top-k of E small experts, and mixes their outputs.
//! [`BestDayPolicy`] uses its forecasts to sell on the best remaining day.

mod checkpoint;
mod embed;
mod moe;
mod policy;
mod train;

use std::path::Path;

pub use checkpoint::{load_moe, read_moe, save_moe, write_moe, MOE_MAGIC, MOE_VERSION};
pub use embed::{
    augment_long, soliton_profile, EmbedCache, EmbedGrads, Embedding, EmbeddingKind, SolitonEmbed, SolitonGrads,
    SolitonProfile, SolitonTail, TableEmbed, TABLE_ROWS,
};
pub use moe::{gate_topk, topk_softmax, Gating, MoeCache, MoeGrads, MoeModel};
pub use policy::{best_day_index, best_day_policy, BestDayPolicy};
pub use train::{
    day_of_year, forecast_mse, train_moe, train_moe_on, MoeConfig, MoeOptimizer, MoeReport, RowSparseAdam, TrainedMoe,
};

use crate::dataio::Dataset;
use crate::{Error, Result};

/// Writes `day,actual_price,predicted_price` for every day of `data`.
pub fn write_forecast_audit(model: &MoeModel, data: &Dataset, path: &Path, header: &str) -> Result<()> {
    let mut out = String::new();
    if !header.is_empty() {
        out.push_str(header);
        out.push('\n');
    }
    out.push_str("day,actual_price,predicted_price\n");
    for d in data.days() {
        let p = model.predict(day_of_year(d.day) as f64)?;
        out.push_str(&format!("{},{},{}\n", d.day, d.price, p));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
