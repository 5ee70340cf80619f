//! Loss-versus-compute curves from run logs, their cross-run lower
//! envelope, and power-law fits `L(C) = (C / c_scale)^(−alpha)`.

use std::fmt::Write as _;
use std::path::Path;

use crate::accounting::CostScenario;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub compute: f64,
    pub loss: f64,
}

impl CurvePoint {
    pub fn new(compute: f64, loss: f64) -> Self {
        CurvePoint { compute, loss }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub c_scale: f64,
    /// Root-mean-square residual of `ln L`.
    pub rmse_log: f64,
    /// Irreducible loss, when fitted.
    pub offset: Option<f64>,
    pub points: usize,
}

/// Merges runs by compute and keeps each point whose loss is strictly
/// below every kept point of smaller compute.
pub fn lower_envelope(runs: &[Vec<CurvePoint>]) -> Result<Vec<CurvePoint>> {
    let mut all: Vec<CurvePoint> = runs.iter().flatten().copied().collect();
    if all.is_empty() {
        return Err(Error::invalid("no curve points to take an envelope of"));
    }
    all.sort_by(|a, b| a.compute.total_cmp(&b.compute).then(a.loss.total_cmp(&b.loss)));
    let mut out: Vec<CurvePoint> = Vec::new();
    for p in all {
        if out
            .last()
            .is_none_or(|last| p.loss < last.loss && p.compute > last.compute)
        {
            out.push(p);
        }
    }
    Ok(out)
}

/// Drops the points of a run below `fraction` of its final compute.
pub fn apply_floor(run: &[CurvePoint], fraction: f64) -> Vec<CurvePoint> {
    let max = run.iter().map(|p| p.compute).fold(0.0, f64::max);
    run.iter().copied().filter(|p| p.compute >= fraction * max).collect()
}

fn check_points(points: &[CurvePoint]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 points to fit, got {}",
            points.len()
        )));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(p.compute > 0.0 && p.loss > 0.0) || !p.compute.is_finite())
    {
        return Err(Error::invalid(format!(
            "fit points must be positive and finite, got ({}, {})",
            p.compute, p.loss
        )));
    }
    Ok(())
}

/// Ordinary least squares of `y` on `x`: `(slope, intercept)`.
fn ols(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("compute values have no spread in log space"));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Least-squares line through `(ln C, ln L)`.
pub fn fit_power_law(points: &[CurvePoint]) -> Result<PowerLawFit> {
    check_points(points)?;
    let x: Vec<f64> = points.iter().map(|p| p.compute.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.loss.ln()).collect();
    let (slope, intercept) = ols(&x, &y)?;
    let alpha = -slope;
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!(
            "loss does not decrease with compute (fitted exponent {alpha:.3e}): no scaling"
        )));
    }
    let rmse_log = (x
        .iter()
        .zip(&y)
        .map(|(a, b)| (b - (intercept + slope * a)).powi(2))
        .sum::<f64>()
        / x.len() as f64)
        .sqrt();
    Ok(PowerLawFit {
        alpha,
        c_scale: (intercept / alpha).exp(),
        rmse_log,
        offset: None,
        points: points.len(),
    })
}

/// Fits `L = E + (C / c_scale)^(−alpha)`, choosing `E` in `[0, min L)` by
/// golden-section search on the log-loss residual.
pub fn fit_power_law_with_offset(points: &[CurvePoint]) -> Result<PowerLawFit> {
    check_points(points)?;
    let min_loss = points.iter().map(|p| p.loss).fold(f64::INFINITY, f64::min);
    let residual = |e: f64| -> Option<(f64, PowerLawFit)> {
        let shifted: Vec<CurvePoint> = points.iter().map(|p| CurvePoint::new(p.compute, p.loss - e)).collect();
        let fit = fit_power_law(&shifted).ok()?;
        let rmse = (points
            .iter()
            .map(|p| (p.loss.ln() - (e + predict_loss(&fit, p.compute)).ln()).powi(2))
            .sum::<f64>()
            / points.len() as f64)
            .sqrt();
        Some((rmse, fit))
    };
    let score = |e: f64| residual(e).map_or(f64::INFINITY, |r| r.0);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, min_loss * (1.0 - 1e-9));
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let (mut fa, mut fb) = (score(a), score(b));
    for _ in 0..200 {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = score(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = score(b);
        }
    }
    let candidates = [0.0, (lo + hi) / 2.0];
    let (e, (rmse, fit)) = candidates
        .iter()
        .filter_map(|&e| residual(e).map(|r| (e, r)))
        .min_by(|x, y| x.1 .0.total_cmp(&y.1 .0))
        .ok_or_else(|| Error::invalid("no offset gives a decreasing power law"))?;
    Ok(PowerLawFit {
        rmse_log: rmse,
        offset: Some(e),
        ..fit
    })
}

/// `offset + (compute / c_scale)^(−alpha)`.
pub fn predict_loss(fit: &PowerLawFit, compute: f64) -> f64 {
    fit.offset.unwrap_or(0.0) + (compute / fit.c_scale).powf(-fit.alpha)
}

/// Which loss column of a run log to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossColumn {
    Train,
    Val,
}

impl LossColumn {
    pub fn name(self) -> &'static str {
        match self {
            LossColumn::Train => "train_loss",
            LossColumn::Val => "val_loss",
        }
    }
}

impl std::str::FromStr for LossColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" | "train_loss" => Ok(LossColumn::Train),
            "val" | "val_loss" => Ok(LossColumn::Val),
            other => Err(Error::invalid(format!(
                "unknown loss column {other:?} (use train or val)"
            ))),
        }
    }
}

/// Reads `(compute, loss)` points from a run log. Only complete lines are
/// read, so logs still being written are safe; rows without a finite
/// loss are skipped.
pub fn read_runlog(path: impl AsRef<Path>, cost: CostScenario, loss: LossColumn) -> Result<Vec<CurvePoint>> {
    let path = path.as_ref();
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let complete = match text.iter().rposition(|&b| b == b'\n') {
        Some(i) => &text[..=i],
        None => &text[..0],
    };
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().from_reader(complete);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column {name}")))
    };
    let (ci, li) = (col(cost.column())?, col(loss.name())?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let compute: f64 = field(ci)
            .parse::<u128>()
            .map(|v| v as f64)
            .map_err(|_| parse_err(line, format!("bad {} value {:?}", cost.column(), field(ci))))?;
        let raw = field(li);
        if raw.is_empty() {
            continue;
        }
        let l: f64 = raw
            .parse()
            .map_err(|_| parse_err(line, format!("bad {} value {raw:?}", loss.name())))?;
        if l.is_finite() && compute > 0.0 {
            out.push(CurvePoint::new(compute, l));
        }
    }
    Ok(out)
}

/// Two-column `compute,loss` text.
pub fn render_curve(points: &[CurvePoint]) -> String {
    let mut s = String::from("compute,loss\n");
    for p in points {
        writeln!(s, "{},{}", p.compute, p.loss).expect("string write");
    }
    s
}

/// `key=value` lines describing a fit under `prefix`.
pub fn render_fit(prefix: &str, fit: &PowerLawFit) -> String {
    let mut s = String::new();
    writeln!(s, "{prefix}.alpha={}", fit.alpha).expect("string write");
    writeln!(s, "{prefix}.c_scale={}", fit.c_scale).expect("string write");
    writeln!(s, "{prefix}.rmse_log={}", fit.rmse_log).expect("string write");
    writeln!(s, "{prefix}.points={}", fit.points).expect("string write");
    if let Some(e) = fit.offset {
        writeln!(s, "{prefix}.offset={e}").expect("string write");
    }
    s
}
