//! Run records, joint-success filtering and SR / efficiency tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::episode::TraceStep;
use crate::rl::TrainLogRow;
use crate::world::Outcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rws,
    Pcss,
    Bbums,
    Bbdps,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Rws, Method::Pcss, Method::Bbums, Method::Bbdps];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rws => "rws",
            Method::Pcss => "pcss",
            Method::Bbums => "bbums",
            Method::Bbdps => "bbdps",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Rws => "RWS",
            Method::Pcss => "PCSS",
            Method::Bbums => "BBUMS",
            Method::Bbdps => "BBDPS",
        }
    }
}

impl FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| BenchError::Scenario(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of one evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub episode: usize,
    pub outcome: Outcome,
    pub actions: usize,
    pub distance: f64,
}

impl RunRecord {
    pub fn success(&self) -> bool {
        self.outcome == Outcome::Success
    }
}

pub fn records_to_csv(records: &[RunRecord]) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| BenchError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| BenchError::Csv(e.to_string()))
}

pub fn records_from_csv(text: &str) -> Result<Vec<RunRecord>, BenchError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| BenchError::Csv(e.to_string()))
}

pub fn train_log_to_csv(rows: &[TrainLogRow]) -> Result<String, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| BenchError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| BenchError::Csv(e.to_string()))
}

/// One row per trace step; the initial observation has an empty primitive.
pub fn trace_to_csv(steps: &[TraceStep]) -> String {
    let mut out =
        String::from("step,primitive,row,col,heading,goal_row,goal_col,detections,max_target_posterior,outcome\n");
    for t in steps {
        let prim = t.primitive.map(|p| format!("{p:?}")).unwrap_or_default();
        let (gr, gc) = t.goal.map_or((String::new(), String::new()), |g| {
            (g.row.to_string(), g.col.to_string())
        });
        let _ = writeln!(
            out,
            "{},{},{},{},{:?},{},{},{},{:.6},{}",
            t.step,
            prim,
            t.pose.cell.row,
            t.pose.cell.col,
            t.pose.heading,
            gr,
            gc,
            t.detections,
            t.max_target_posterior,
            t.outcome.as_str()
        );
    }
    out
}

/// Episode indices on which every method succeeded.
///
/// Every method present must have exactly one record for every episode index
/// that appears anywhere in `records`.
pub fn joint_success_filter(records: &[RunRecord]) -> Result<BTreeSet<usize>, BenchError> {
    let episodes: BTreeSet<usize> = records.iter().map(|r| r.episode).collect();
    let mut by_method: BTreeMap<Method, BTreeMap<usize, bool>> = BTreeMap::new();
    for r in records {
        if by_method
            .entry(r.method)
            .or_default()
            .insert(r.episode, r.success())
            .is_some()
        {
            return Err(BenchError::Records(format!(
                "duplicate record for {} episode {}",
                r.method, r.episode
            )));
        }
    }
    for (m, eps) in &by_method {
        if let Some(missing) = episodes.iter().find(|e| !eps.contains_key(e)) {
            return Err(BenchError::Records(format!("{m} has no record for episode {missing}")));
        }
    }
    let joint: BTreeSet<usize> = episodes
        .into_iter()
        .filter(|e| by_method.values().all(|eps| eps[e]))
        .collect();
    if joint.is_empty() {
        log::warn!("no episode was solved by every method; efficiency columns are empty");
    }
    Ok(joint)
}

/// Sample mean and standard error (sample SD over sqrt(n), 0 when n <= 1).
pub fn mean_se(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub episodes: usize,
    pub successes: usize,
    pub sr: f64,
    pub subset_size: usize,
    pub actions_mean: Option<f64>,
    pub actions_se: Option<f64>,
    pub distance_mean: Option<f64>,
    pub distance_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

/// Success rate over all episodes per method; action and distance mean ± SE
/// over the episodes in `subset` only.
pub fn aggregate(records: &[RunRecord], subset: &BTreeSet<usize>) -> MetricsTable {
    let methods: BTreeSet<Method> = records.iter().map(|r| r.method).collect();
    let rows = methods
        .into_iter()
        .map(|m| {
            let mine: Vec<&RunRecord> = records.iter().filter(|r| r.method == m).collect();
            let successes = mine.iter().filter(|r| r.success()).count();
            let chosen: Vec<&&RunRecord> = mine.iter().filter(|r| subset.contains(&r.episode)).collect();
            let actions: Vec<f64> = chosen.iter().map(|r| r.actions as f64).collect();
            let distance: Vec<f64> = chosen.iter().map(|r| r.distance).collect();
            let a = mean_se(&actions);
            let d = mean_se(&distance);
            MetricsRow {
                method: m,
                episodes: mine.len(),
                successes,
                sr: successes as f64 / mine.len() as f64,
                subset_size: chosen.len(),
                actions_mean: a.map(|x| x.0),
                actions_se: a.map(|x| x.1),
                distance_mean: d.map(|x| x.0),
                distance_se: d.map(|x| x.1),
            }
        })
        .collect();
    MetricsTable { rows }
}

impl MetricsTable {
    pub fn row(&self, method: Method) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> Result<String, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| BenchError::Csv(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| BenchError::Csv(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| BenchError::Csv(e.to_string()))
    }

    /// Success-rate table followed by the joint-success efficiency table.
    pub fn to_text(&self, title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Success rate ({title})");
        let _ = writeln!(out, "{:<8} {:>6} {:>9}", "method", "SR", "episodes");
        for r in &self.rows {
            let _ = writeln!(out, "{:<8} {:>6.2} {:>9}", r.method.label(), r.sr, r.episodes);
        }
        let n = self.rows.first().map_or(0, |r| r.subset_size);
        let _ = writeln!(out);
        let _ = writeln!(out, "Efficiency over joint-success episodes ({title}, n = {n})");
        let _ = writeln!(out, "{:<8} {:>18} {:>18}", "method", "actions", "distance [m]");
        let fmt = |m: Option<f64>, s: Option<f64>| match (m, s) {
            (Some(m), Some(s)) => format!("{m:.2} ± {s:.2}"),
            _ => "-".to_string(),
        };
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:>18} {:>18}",
                r.method.label(),
                fmt(r.actions_mean, r.actions_se),
                fmt(r.distance_mean, r.distance_se)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: Method, episode: usize, ok: bool, actions: usize) -> RunRecord {
        RunRecord {
            method,
            episode,
            outcome: if ok {
                Outcome::Success
            } else {
                Outcome::HorizonExhausted
            },
            actions,
            distance: actions as f64 * 0.3,
        }
    }

    #[test]
    fn se_examples() {
        assert_eq!(mean_se(&[10.0, 14.0]), Some((12.0, 2.0)));
        assert_eq!(mean_se(&[7.0]), Some((7.0, 0.0)));
        assert_eq!(mean_se(&[]), None);
    }

    #[test]
    fn filter_and_sr() {
        let mut rs = vec![];
        for m in Method::ALL {
            for e in 0..4 {
                let ok = !(e == 2 && m == Method::Rws);
                rs.push(rec(m, e, ok, 10 + e));
            }
        }
        let joint = joint_success_filter(&rs).unwrap();
        assert_eq!(joint, BTreeSet::from([0, 1, 3]));
        let t = aggregate(&rs, &joint);
        assert_eq!(t.row(Method::Rws).unwrap().sr, 0.75);
        assert_eq!(t.row(Method::Pcss).unwrap().sr, 1.0);
        assert_eq!(t.rows.len(), 4);
        rs.pop();
        assert!(matches!(joint_success_filter(&rs), Err(BenchError::Records(_))));
    }

    #[test]
    fn csv_round_trip() {
        let rs = vec![rec(Method::Bbums, 3, true, 41), rec(Method::Rws, 0, false, 7)];
        let text = records_to_csv(&rs).unwrap();
        assert!(text.starts_with("method,episode,outcome,actions,distance\n"));
        assert_eq!(records_from_csv(&text).unwrap(), rs);
        assert_eq!("BBDPS".parse::<Method>().unwrap(), Method::Bbdps);
        assert!("dqn".parse::<Method>().is_err());
    }
}
