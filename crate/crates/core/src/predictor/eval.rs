use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::{kendall_tau_distance, PredictorError, PredictorKind, QuantileTable};
use crate::ids::ModelId;
use crate::workload::{first_stage_request, next_stage_request, TraceRecord};

/// One estimator's Kendall-tau distance per model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub predictor: String,
    pub dataset: String,
    pub distances: BTreeMap<ModelId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictorReport {
    pub models: Vec<ModelId>,
    pub rows: Vec<ReportRow>,
}

impl PredictorReport {
    pub fn distance(&self, predictor: &str, model: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.predictor == predictor)
            .and_then(|r| r.distances.get(model).copied())
    }
}

/// Rank every stage request of `test` by each estimator against the true
/// remaining output, per model.
///
/// The quantile estimator is trained on `train`. The FCFS row ranks
/// requests by (program arrival, stage), i.e. carries no length signal.
pub fn evaluate_predictors(
    train: &[TraceRecord],
    test: &[TraceRecord],
    models: &[ModelId],
    dataset: &str,
    quantile_level: f64,
) -> Result<PredictorReport, PredictorError> {
    let quantile = PredictorKind::EmpiricalQuantile(QuantileTable::train(train, quantile_level)?);

    let mut arrival_order: Vec<&TraceRecord> = test.iter().collect();
    arrival_order.sort_by(|a, b| {
        a.user_arrival_time_ms
            .total_cmp(&b.user_arrival_time_ms)
            .then_with(|| a.program_id.cmp(&b.program_id))
    });

    let names = ["empirical_quantile", "fcfs", "input_length", "oracle"];
    let mut rows: Vec<ReportRow> = names
        .iter()
        .map(|n| ReportRow {
            predictor: n.to_string(),
            dataset: dataset.to_string(),
            distances: BTreeMap::new(),
        })
        .collect();

    for model in models {
        let mut truth = Vec::new();
        let mut preds: [Vec<f64>; 4] = Default::default();
        let mut position = 0.0;
        for rec in &arrival_order {
            let mut req = first_stage_request(rec, rec.user_arrival_time_ms)?;
            loop {
                truth.push(rec.remaining_tokens(req.stage_index, model)? as f64);
                preds[0].push(quantile.predict(&req, rec, model)?.tokens);
                preds[1].push(position);
                preds[2].push(PredictorKind::InputLengthProxy.predict(&req, rec, model)?.tokens);
                preds[3].push(PredictorKind::Oracle.predict(&req, rec, model)?.tokens);
                position += 1.0;
                match next_stage_request(rec, req.stage_index, 0.0, model)? {
                    Some(next) => req = next,
                    None => break,
                }
            }
        }
        for (row, p) in rows.iter_mut().zip(&preds) {
            row.distances
                .insert(model.clone(), kendall_tau_distance(p, &truth)?);
        }
    }
    Ok(PredictorReport {
        models: models.to_vec(),
        rows,
    })
}

/// CSV with one row per estimator and one column per model.
pub fn write_report_csv(report: &PredictorReport, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["predictor".to_string(), "dataset".to_string()];
    header.extend(report.models.iter().map(|m| m.to_string()));
    w.write_record(&header)?;
    for row in &report.rows {
        let mut rec = vec![row.predictor.clone(), row.dataset.clone()];
        rec.extend(
            report
                .models
                .iter()
                .map(|m| format!("{:.3}", row.distances.get(m).copied().unwrap_or(f64::NAN))),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
