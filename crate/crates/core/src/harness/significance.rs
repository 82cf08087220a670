use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::experiment::TrialReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    /// Mark the k coordinates with the largest |v|.
    #[default]
    Largest,
    /// Mark the k smallest, as a control.
    Smallest,
}

impl FromStr for RankMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "largest" => Ok(Self::Largest),
            "smallest" => Ok(Self::Smallest),
            other => Err(Error::InvalidParameter(format!("unknown rank mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCoordinate {
    pub index: usize,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub k: usize,
    pub mode: RankMode,
    pub trials: usize,
    /// η_j for every coordinate j.
    pub counts: Vec<usize>,
    /// Coordinates with the highest η, best first.
    pub top: Vec<RankedCoordinate>,
    /// Coordinates with the lowest η, lowest first.
    pub bottom: Vec<RankedCoordinate>,
}

impl SignificanceReport {
    pub fn with_names(mut self, names: &[String]) -> Result<Self> {
        if names.len() != self.counts.len() {
            return Err(Error::DimensionMismatch {
                expected: self.counts.len(),
                got: names.len(),
            });
        }
        for c in self.top.iter_mut().chain(self.bottom.iter_mut()) {
            c.name = Some(names[c.index].clone());
        }
        Ok(self)
    }
}

/// Counts, over trials, how often each coordinate is among the k largest
/// (or smallest) in magnitude. With several locations a coordinate's score
/// in a trial is max_l |v_l,j|. Ties are broken by coordinate index.
/// Failed trials are skipped.
pub fn significance_report(reports: &[TrialReport], k: usize, mode: RankMode) -> Result<SignificanceReport> {
    let mut counts: Vec<usize> = Vec::new();
    let mut trials = 0;
    for r in reports.iter().filter(|r| r.error.is_none()) {
        let theta = r.theta.as_ref().ok_or(Error::MissingTheta(r.trial))?;
        let d = theta.locations.dim();
        if counts.is_empty() {
            if k == 0 || k > d {
                return Err(Error::InvalidParameter(format!("k must lie in 1..={d}, got {k}")));
            }
            counts = vec![0; d];
        } else if counts.len() != d {
            return Err(Error::DimensionMismatch {
                expected: counts.len(),
                got: d,
            });
        }
        let score: Vec<f64> = (0..d)
            .map(|c| (0..theta.locations.len()).map(|l| theta.locations.point(l)[c].abs()).fold(0.0, f64::max))
            .collect();
        let mut order: Vec<usize> = (0..d).collect();
        match mode {
            RankMode::Largest => order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b))),
            RankMode::Smallest => order.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b))),
        }
        for &c in &order[..k] {
            counts[c] += 1;
        }
        trials += 1;
    }

    let ranked = |desc: bool| {
        let mut idx: Vec<usize> = (0..counts.len()).collect();
        idx.sort_by(|&a, &b| {
            let ord = if desc { counts[b].cmp(&counts[a]) } else { counts[a].cmp(&counts[b]) };
            ord.then(a.cmp(&b))
        });
        idx.into_iter()
            .take(k.min(counts.len()))
            .map(|index| RankedCoordinate {
                index,
                count: counts[index],
                name: None,
            })
            .collect::<Vec<_>>()
    };
    Ok(SignificanceReport {
        k,
        mode,
        trials,
        top: ranked(true),
        bottom: ranked(false),
        counts,
    })
}
