use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::volume::Mask;
use crate::error::{Error, Result};
use crate::pipeline::BoundingBox;

pub const FAILURE_DSC: f64 = 0.6;

/// `2|a ∧ b| / (|a| + |b|)`, with two empty masks scoring 1.
pub fn dsc(a: &Mask, b: &Mask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "dsc of {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x != 0, y != 0);
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Fraction of `mask` voxels inside `bbox`.
pub fn box_containment(bbox: &BoundingBox, mask: &Mask) -> Result<f64> {
    let [nx, ny, _] = mask.dims();
    let (mut total, mut inside) = (0usize, 0usize);
    for (i, &v) in mask.data().iter().enumerate() {
        if v != 0 {
            total += 1;
            let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
            inside += bbox.contains([x, y, z]) as usize;
        }
    }
    if total == 0 {
        return Err(Error::EmptyMask("containment of an empty mask is undefined".into()));
    }
    Ok(inside as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeMetrics {
    pub name: String,
    pub dsc: f64,
    pub containment: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub volumes: Vec<VolumeMetrics>,
    pub mean_dsc: f64,
    /// Volumes with DSC below [`FAILURE_DSC`].
    pub failures: usize,
    /// Boxes holding every cavity voxel.
    pub boxes_fully_contained: usize,
    /// Boxes holding at least 95% of the cavity voxels.
    pub boxes_95_contained: usize,
}

/// One named case: prediction, ground truth and an optional localization box.
pub struct EvalCase<'a> {
    pub name: String,
    pub prediction: &'a Mask,
    pub truth: &'a Mask,
    pub bbox: Option<BoundingBox>,
}

pub fn evaluate(cases: &[EvalCase<'_>]) -> Result<MetricsReport> {
    let mut volumes = Vec::with_capacity(cases.len());
    for c in cases {
        let containment = match &c.bbox {
            Some(b) => Some(box_containment(b, c.truth)?),
            None => None,
        };
        volumes.push(VolumeMetrics {
            name: c.name.clone(),
            dsc: dsc(c.prediction, c.truth)?,
            containment,
        });
    }
    Ok(summarise(volumes))
}

/// Evaluation over parallel lists; lengths must match.
pub fn evaluate_lists(predictions: &[Mask], truths: &[Mask], boxes: Option<&[BoundingBox]>) -> Result<MetricsReport> {
    if predictions.len() != truths.len() || boxes.is_some_and(|b| b.len() != truths.len()) {
        return Err(Error::invalid(format!(
            "{} predictions, {} ground truths{}",
            predictions.len(),
            truths.len(),
            boxes.map_or(String::new(), |b| format!(", {} boxes", b.len()))
        )));
    }
    let cases: Vec<EvalCase<'_>> = predictions
        .iter()
        .zip(truths)
        .enumerate()
        .map(|(i, (p, t))| EvalCase {
            name: i.to_string(),
            prediction: p,
            truth: t,
            bbox: boxes.map(|b| b[i]),
        })
        .collect();
    evaluate(&cases)
}

pub fn summarise(volumes: Vec<VolumeMetrics>) -> MetricsReport {
    let n = volumes.len();
    let mean_dsc = if n == 0 {
        0.0
    } else {
        volumes.iter().map(|v| v.dsc).sum::<f64>() / n as f64
    };
    let count = |f: &dyn Fn(f64) -> bool| volumes.iter().filter_map(|v| v.containment).filter(|&c| f(c)).count();
    MetricsReport {
        failures: volumes.iter().filter(|v| v.dsc < FAILURE_DSC).count(),
        boxes_fully_contained: count(&|c| c >= 1.0),
        boxes_95_contained: count(&|c| c >= 0.95),
        mean_dsc,
        volumes,
    }
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::invalid(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Malformed(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        let mut a = Mask::zeros([4, 1, 1]);
        let mut b = Mask::zeros([4, 1, 1]);
        a.set(0, 0, 0, 1);
        a.set(1, 0, 0, 1);
        b.set(1, 0, 0, 1);
        assert_eq!(dsc(&a, &b).unwrap(), 2.0 / 3.0);
        assert_eq!(dsc(&Mask::zeros([2, 2, 2]), &Mask::zeros([2, 2, 2])).unwrap(), 1.0);
    }

    #[test]
    fn failure_threshold() {
        let v = |d: f64| VolumeMetrics {
            name: String::new(),
            dsc: d,
            containment: None,
        };
        let r = summarise(vec![v(0.59), v(0.6), v(1.0)]);
        assert_eq!(r.failures, 1);
    }
}
