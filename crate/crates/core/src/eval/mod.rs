//! Metrics, prediction records and reports.

mod baselines;
mod sweep;

pub use baselines::{knn_features, normalize_instruction, Knn, RuleLookup};
pub use sweep::{
    spearman, stratified_fraction, Bench, CellRun, CellSummary, LatencyStats, MeanStd,
    MetricSummary, Protocol, SweepConfig, SweepReport, latency_probe, sweep,
};

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::params::{Param, ParameterConfig, ParameterSpace, NUM_PARAMS, VALUES_PER_PARAM};

/// 1 when the prediction equals the truth.
pub fn exact(param: Param, truth: &str, prediction: &str) -> Result<bool> {
    Ok(param.parse_value(truth)? == param.parse_value(prediction)?)
}

/// Within one ordinal level, or `None` where the metric is not defined.
pub fn win_at_1(space: &ParameterSpace, param: Param, truth: &str, prediction: &str) -> Result<Option<bool>> {
    param.parse_value(truth)?;
    param.parse_value(prediction)?;
    let descriptor = &space.parameters[param.index()];
    if !descriptor.win1_eligible {
        return Ok(None);
    }
    let ord = |v: &str| {
        space
            .ord(param, v)
            .ok_or_else(|| invalid(format!("'{v}' missing from parameter space")))
    };
    Ok(Some(ord(truth)?.abs_diff(ord(prediction)?) <= 1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub truth: ParameterConfig,
    pub prediction: ParameterConfig,
    pub scores: Option<[[f64; VALUES_PER_PARAM]; NUM_PARAMS]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireParam {
    truth: String,
    prediction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<BTreeMap<String, f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRecord {
    instance_id: String,
    parameters: BTreeMap<String, WireParam>,
}

impl PredictionRecord {
    fn to_wire(&self) -> WireRecord {
        let parameters = Param::ALL
            .iter()
            .map(|&p| {
                let scores = self.scores.map(|s| {
                    p.vocabulary()
                        .iter()
                        .enumerate()
                        .map(|(v, name)| (name.to_string(), s[p.index()][v]))
                        .collect()
                });
                let wire = WireParam {
                    truth: self.truth.value_name(p),
                    prediction: self.prediction.value_name(p),
                    scores,
                };
                (p.name().to_string(), wire)
            })
            .collect();
        WireRecord {
            instance_id: self.instance_id.clone(),
            parameters,
        }
    }

    fn from_wire(w: WireRecord) -> Result<Self> {
        if w.parameters.len() != NUM_PARAMS {
            return Err(invalid(format!(
                "record '{}' covers {} parameters",
                w.instance_id,
                w.parameters.len()
            )));
        }
        let mut truth = [0u8; NUM_PARAMS];
        let mut prediction = [0u8; NUM_PARAMS];
        let mut scores = [[0.0; VALUES_PER_PARAM]; NUM_PARAMS];
        let mut have_scores = None;
        for p in Param::ALL {
            let wp = w
                .parameters
                .get(p.name())
                .ok_or_else(|| invalid(format!("record '{}' lacks {}", w.instance_id, p.name())))?;
            truth[p.index()] = p.parse_value(&wp.truth)?;
            prediction[p.index()] = p.parse_value(&wp.prediction)?;
            if *have_scores.get_or_insert(wp.scores.is_some()) != wp.scores.is_some() {
                return Err(invalid("scores must be present for all parameters or none"));
            }
            if let Some(map) = &wp.scores {
                for (v, name) in p.vocabulary().iter().enumerate() {
                    scores[p.index()][v] = *map
                        .get(*name)
                        .ok_or_else(|| invalid(format!("missing score for {}={name}", p.name())))?;
                }
            }
        }
        Ok(Self {
            instance_id: w.instance_id,
            truth: ParameterConfig(truth),
            prediction: ParameterConfig(prediction),
            scores: have_scores.unwrap_or(false).then_some(scores),
        })
    }
}

pub fn write_records<W: Write>(records: &[PredictionRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, &r.to_wire())?;
        w.write_all(b"\n").map_err(|e| Error::Io {
            path: "<records>".into(),
            source: e,
        })?;
    }
    Ok(())
}

pub fn parse_records<R: BufRead>(reader: R) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<WireRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|w| PredictionRecord::from_wire(w).map_err(|e| e.to_string()));
        out.push(parsed.map_err(|message| Error::Parse { line: i + 1, message })?);
    }
    Ok(out)
}

/// Unweighted mean of per-class F1. Classes absent from both truth and
/// prediction are left out of the mean.
pub fn macro_f1(records: &[PredictionRecord], param: Param) -> Result<f64> {
    if records.is_empty() {
        return Err(invalid("macro_f1 needs at least one record"));
    }
    let pairs: Vec<(u8, u8)> = records
        .iter()
        .map(|r| (r.truth.get(param), r.prediction.get(param)))
        .collect();
    macro_f1_pairs(&pairs)
}

fn macro_f1_pairs(pairs: &[(u8, u8)]) -> Result<f64> {
    let mut tp = [0usize; VALUES_PER_PARAM];
    let mut fp = [0usize; VALUES_PER_PARAM];
    let mut fn_ = [0usize; VALUES_PER_PARAM];
    for &(t, p) in pairs {
        let (t, p) = (t as usize, p as usize);
        if t >= VALUES_PER_PARAM || p >= VALUES_PER_PARAM {
            return Err(invalid("label outside vocabulary"));
        }
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let mut sum = 0.0;
    let mut classes = 0;
    for c in 0..VALUES_PER_PARAM {
        if tp[c] + fp[c] + fn_[c] == 0 {
            continue;
        }
        classes += 1;
        sum += 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fn_[c]) as f64;
    }
    Ok(sum / classes as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamMetrics {
    pub parameter: String,
    pub exact: f64,
    /// `None` where Win@1 is not applicable.
    pub win1: Option<f64>,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub predictor: String,
    pub split: String,
    pub config_fingerprint: String,
    pub count: usize,
    pub parameters: Vec<ParamMetrics>,
    pub average_exact: f64,
    pub average_win1: f64,
    pub average_macro_f1: f64,
    pub system_exact: f64,
    /// All win1-eligible parameters within one level and range exact.
    pub system_win1_range_exact: f64,
}

impl EvalReport {
    pub fn param(&self, p: Param) -> &ParamMetrics {
        &self.parameters[p.index()]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("parameter,exact,win1,f1\n");
        for m in &self.parameters {
            let win1 = m.win1.map(|w| format!("{w:.6}")).unwrap_or_else(|| "n/a".into());
            out.push_str(&format!("{},{:.6},{win1},{:.6}\n", m.parameter, m.exact, m.macro_f1));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{} on {} ({} instances)\n{:<24} {:>8} {:>8} {:>8}\n",
            self.predictor, self.split, self.count, "parameter", "exact", "win@1", "f1"
        );
        for m in &self.parameters {
            let win1 = m.win1.map(|w| format!("{:.2}", 100.0 * w)).unwrap_or_else(|| "n/a".into());
            out.push_str(&format!(
                "{:<24} {:>8.2} {:>8} {:>8.2}\n",
                m.parameter,
                100.0 * m.exact,
                win1,
                100.0 * m.macro_f1
            ));
        }
        out.push_str(&format!(
            "{:<24} {:>8.2} {:>8.2} {:>8.2}\n",
            "average",
            100.0 * self.average_exact,
            100.0 * self.average_win1,
            100.0 * self.average_macro_f1
        ));
        out.push_str(&format!(
            "system: all-exact {:.2}, win@1 with exact range {:.2}\n",
            100.0 * self.system_exact,
            100.0 * self.system_win1_range_exact
        ));
        out
    }
}

/// Compute a report from prediction records.
pub fn evaluate(
    records: &[PredictionRecord],
    predictor: &str,
    split: &str,
    config_fingerprint: &str,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(invalid("cannot evaluate an empty test set"));
    }
    for r in records {
        r.truth.validate()?;
        r.prediction.validate()?;
    }
    let space = ParameterSpace::standard();
    let n = records.len() as f64;
    let mut parameters = Vec::with_capacity(NUM_PARAMS);
    for p in Param::ALL {
        let mut hits = 0usize;
        let mut near = 0usize;
        for r in records {
            let (t, y) = (r.truth.get(p), r.prediction.get(p));
            hits += (t == y) as usize;
            near += (t.abs_diff(y) <= 1) as usize;
        }
        let eligible = space.parameters[p.index()].win1_eligible;
        parameters.push(ParamMetrics {
            parameter: p.name().to_string(),
            exact: hits as f64 / n,
            win1: eligible.then(|| near as f64 / n),
            macro_f1: macro_f1(records, p)?,
        });
    }
    let mut system_exact = 0usize;
    let mut system_win1 = 0usize;
    for r in records {
        system_exact += (r.truth == r.prediction) as usize;
        let ok = Param::ALL.iter().all(|&p| {
            let (t, y) = (r.truth.get(p), r.prediction.get(p));
            if p.win1_eligible() {
                t.abs_diff(y) <= 1
            } else {
                t == y
            }
        });
        system_win1 += ok as usize;
    }
    let mean = |f: &dyn Fn(&ParamMetrics) -> Option<f64>| {
        let vals: Vec<f64> = parameters.iter().filter_map(f).collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    Ok(EvalReport {
        predictor: predictor.to_string(),
        split: split.to_string(),
        config_fingerprint: config_fingerprint.to_string(),
        count: records.len(),
        average_exact: mean(&|m| Some(m.exact)),
        average_win1: mean(&|m| m.win1),
        average_macro_f1: mean(&|m| Some(m.macro_f1)),
        parameters,
        system_exact: system_exact as f64 / n,
        system_win1_range_exact: system_win1 as f64 / n,
    })
}
