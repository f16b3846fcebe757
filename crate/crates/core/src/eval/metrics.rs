//! Rank-1 and mean average precision over a probe x gallery score matrix.
//!
//! Ranking is by descending score with ties broken towards the lower gallery
//! index. AP is the mean of precision at each relevant item's rank, without
//! interpolation.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    /// `scores[p][g]`.
    pub scores: Vec<Vec<f64>>,
    pub probe_labels: Vec<usize>,
    pub gallery_labels: Vec<usize>,
}

impl ScoreMatrix {
    pub fn new(
        scores: Vec<Vec<f64>>,
        probe_labels: Vec<usize>,
        gallery_labels: Vec<usize>,
    ) -> Result<Self> {
        if scores.len() != probe_labels.len() {
            return Err(Error::Shape(format!(
                "{} score rows for {} probe labels",
                scores.len(),
                probe_labels.len()
            )));
        }
        for (i, row) in scores.iter().enumerate() {
            if row.len() != gallery_labels.len() {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries for {} gallery labels",
                    row.len(),
                    gallery_labels.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("row {i} has a non-finite score")));
            }
        }
        Ok(Self {
            scores,
            probe_labels,
            gallery_labels,
        })
    }

    fn check_protocol(&self) -> Result<()> {
        for (p, label) in self.probe_labels.iter().enumerate() {
            if !self.gallery_labels.contains(label) {
                return Err(Error::Protocol(format!(
                    "probe {p} (identity {label}) has no gallery match"
                )));
            }
        }
        Ok(())
    }

    /// Gallery indices of row `p` in ranked order.
    pub fn ranking(&self, p: usize) -> Vec<usize> {
        let row = &self.scores[p];
        let mut idx: Vec<usize> = (0..row.len()).collect();
        // entries are finite, and -0.0 must tie with 0.0
        idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        idx
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "probe_identity")?;
        for g in &self.gallery_labels {
            write!(out, ",g{g}")?;
        }
        writeln!(out)?;
        for (label, row) in self.probe_labels.iter().zip(&self.scores) {
            write!(out, "{label}")?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub fn rank1(scores: &ScoreMatrix) -> Result<f64> {
    scores.check_protocol()?;
    if scores.probe_labels.is_empty() {
        return Ok(0.0);
    }
    let hits = (0..scores.probe_labels.len())
        .filter(|&p| {
            let row = &scores.scores[p];
            let mut best = 0;
            for (g, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = g;
                }
            }
            scores.gallery_labels[best] == scores.probe_labels[p]
        })
        .count();
    Ok(hits as f64 / scores.probe_labels.len() as f64)
}

pub fn average_precision(scores: &ScoreMatrix, p: usize) -> f64 {
    let label = scores.probe_labels[p];
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, g) in scores.ranking(p).into_iter().enumerate() {
        if scores.gallery_labels[g] == label {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

pub fn mean_average_precision(scores: &ScoreMatrix) -> Result<f64> {
    scores.check_protocol()?;
    let n = scores.probe_labels.len();
    if n == 0 {
        return Ok(0.0);
    }
    Ok((0..n).map(|p| average_precision(scores, p)).sum::<f64>() / n as f64)
}
