//! Threshold evaluation: class means, sweeps, confusion matrices and the
//! 2D state map.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracles::{classify, StateClass, StateLabel};
use crate::separator::LossModel;
use crate::states::{map_state, MapPoint};
use crate::training::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// Positive = entangled.
    Entanglement,
    /// Positive = discordant (entangled states included).
    Discord,
}

impl LabelMode {
    pub fn is_positive(self, label: &StateLabel) -> bool {
        match self {
            LabelMode::Entanglement => !label.is_separable(),
            LabelMode::Discord => !label.is_zero_discord(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LabelMode::Entanglement => "entanglement",
            LabelMode::Discord => "discord",
        }
    }
}

impl std::str::FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "entanglement" | "ent" => Ok(LabelMode::Entanglement),
            "discord" => Ok(LabelMode::Discord),
            _ => Err(Error::invalid(format!("unknown label mode {s:?}"))),
        }
    }
}

pub const DEFAULT_GRID_POINTS: usize = 400;
pub const DEFAULT_GRID_MIN: f64 = 1e-5;
pub const DEFAULT_GRID_MAX: f64 = 1.0;

/// `n` log-spaced points from `lo` to `hi`, both included.
pub fn log_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo, "invalid grid");
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub label_mode: LabelMode,
    pub thresholds: Vec<f64>,
    pub tau: Option<f64>,
}

impl EvalConfig {
    pub fn new(label_mode: LabelMode) -> Self {
        EvalConfig {
            label_mode,
            thresholds: log_grid(DEFAULT_GRID_POINTS, DEFAULT_GRID_MIN, DEFAULT_GRID_MAX),
            tau: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::invalid("empty threshold grid"));
        }
        if self.thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("threshold grid must be strictly ascending"));
        }
        Ok(())
    }
}

/// Rows are labels, columns predictions; a state is predicted positive when
/// its loss exceeds the threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Precision, taken as 1 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn balanced_accuracy(&self) -> f64 {
        0.5 * (self.recall() + self.specificity())
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn confusion_from_losses(losses: &[f64], positive: &[bool], tau: f64) -> Confusion {
    assert_eq!(losses.len(), positive.len());
    let mut c = Confusion::default();
    for (&l, &p) in losses.iter().zip(positive) {
        match (p, l > tau) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub tau: f64,
    pub counts: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub balanced_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsCurve {
    pub label_mode: LabelMode,
    pub points: Vec<CurvePoint>,
    /// Index of the first point with maximal balanced accuracy.
    pub best_index: usize,
}

impl MetricsCurve {
    pub fn best(&self) -> &CurvePoint {
        &self.points[self.best_index]
    }

    pub fn best_tau(&self) -> f64 {
        self.best().tau
    }

    pub fn best_ba(&self) -> f64 {
        self.best().balanced_accuracy
    }

    /// Maximum accuracy over the grid.
    pub fn best_accuracy(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.counts.accuracy())
            .fold(0.0, f64::max)
    }

    /// `tau,tp,fp,tn,fn,pr,rc,ba` preceded by a `# ...` comment line.
    pub fn write_csv<W: Write>(&self, header_comment: &str, mut out: W) -> Result<()> {
        writeln!(out, "# {header_comment}; label_mode={}; pr=1 when tp+fp=0", self.label_mode.name())?;
        writeln!(out, "tau,tp,fp,tn,fn,pr,rc,ba")?;
        for p in &self.points {
            let c = p.counts;
            writeln!(
                out,
                "{:e},{},{},{},{},{},{},{}",
                p.tau, c.tp, c.fp, c.tn, c.fn_, p.precision, p.recall, p.balanced_accuracy
            )?;
        }
        Ok(())
    }
}

fn check_two_classes(positive: &[bool], mode: LabelMode) -> Result<()> {
    let pos = positive.iter().filter(|&&p| p).count();
    if pos == 0 || pos == positive.len() {
        return Err(Error::invalid(format!(
            "dataset has a single class under {} labels ({pos} positive of {})",
            mode.name(),
            positive.len()
        )));
    }
    Ok(())
}

pub fn positives(ds: &Dataset, mode: LabelMode) -> Vec<bool> {
    ds.records.iter().map(|r| mode.is_positive(&r.label)).collect()
}

/// Sweep over precomputed losses.
pub fn sweep_losses(
    losses: &[f64],
    positive: &[bool],
    mode: LabelMode,
    thresholds: &[f64],
) -> Result<MetricsCurve> {
    check_two_classes(positive, mode)?;
    if thresholds.is_empty() {
        return Err(Error::invalid("empty threshold grid"));
    }
    let points: Vec<CurvePoint> = thresholds
        .iter()
        .map(|&tau| {
            let counts = confusion_from_losses(losses, positive, tau);
            CurvePoint {
                tau,
                counts,
                precision: counts.precision(),
                recall: counts.recall(),
                balanced_accuracy: counts.balanced_accuracy(),
            }
        })
        .collect();
    let mut best_index = 0;
    for (i, p) in points.iter().enumerate() {
        if p.balanced_accuracy > points[best_index].balanced_accuracy {
            best_index = i;
        }
    }
    Ok(MetricsCurve {
        label_mode: mode,
        points,
        best_index,
    })
}

pub fn sweep(model: &dyn LossModel, ds: &Dataset, config: &EvalConfig) -> Result<MetricsCurve> {
    config.validate()?;
    let losses = model.losses(&ds.states());
    sweep_losses(&losses, &positives(ds, config.label_mode), config.label_mode, &config.thresholds)
}

pub fn confusion_at(model: &dyn LossModel, ds: &Dataset, tau: f64, mode: LabelMode) -> Result<Confusion> {
    let pos = positives(ds, mode);
    check_two_classes(&pos, mode)?;
    Ok(confusion_from_losses(&model.losses(&ds.states()), &pos, tau))
}

/// Groups used for per-class mean losses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossGroup {
    Separable,
    NonDiscordant,
    /// Every discordant state, entangled ones included.
    Discordant,
    Entangled,
}

impl LossGroup {
    pub const ALL: [LossGroup; 4] = [
        LossGroup::Separable,
        LossGroup::NonDiscordant,
        LossGroup::Discordant,
        LossGroup::Entangled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossGroup::Separable => "separable",
            LossGroup::NonDiscordant => "non-discordant",
            LossGroup::Discordant => "discordant",
            LossGroup::Entangled => "entangled",
        }
    }

    pub fn contains(self, label: &StateLabel) -> bool {
        match self {
            LossGroup::Separable => label.is_separable(),
            LossGroup::NonDiscordant => label.is_zero_discord(),
            LossGroup::Discordant => !label.is_zero_discord(),
            LossGroup::Entangled => !label.is_separable(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMean {
    pub group: LossGroup,
    pub count: usize,
    /// `None` for an empty group.
    pub mean_loss: Option<f64>,
}

pub fn class_means_from_losses(losses: &[f64], labels: &[StateLabel]) -> Vec<ClassMean> {
    LossGroup::ALL
        .iter()
        .map(|&group| {
            let xs: Vec<f64> = losses
                .iter()
                .zip(labels)
                .filter(|(_, l)| group.contains(l))
                .map(|(&x, _)| x)
                .collect();
            ClassMean {
                group,
                count: xs.len(),
                mean_loss: (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64),
            }
        })
        .collect()
}

pub fn class_mean_losses(model: &dyn LossModel, ds: &Dataset) -> Vec<ClassMean> {
    let labels: Vec<StateLabel> = ds.records.iter().map(|r| r.label).collect();
    class_means_from_losses(&model.losses(&ds.states()), &labels)
}

/// `class,count,mean_loss`; absent groups get an empty mean.
pub fn write_class_means_csv<W: Write>(means: &[ClassMean], header_comment: &str, mut out: W) -> Result<()> {
    writeln!(out, "# {header_comment}")?;
    writeln!(out, "class,count,mean_loss")?;
    for m in means {
        match m.mean_loss {
            Some(x) => writeln!(out, "{},{},{x:e}", m.group.name(), m.count)?,
            None => writeln!(out, "{},{},", m.group.name(), m.count)?,
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapCell {
    pub u: f64,
    pub v: f64,
    pub loss: f64,
    pub klass: StateClass,
}

/// The oracle labels of the map grid, computed once and shared between
/// models.
#[derive(Clone, Debug)]
pub struct MapGrid {
    pub grid_n: usize,
    pub points: Vec<MapPoint>,
    pub states: Vec<crate::states::DensityMatrix>,
    pub klass: Vec<StateClass>,
}

pub const MIN_GRID_N: usize = 11;

impl MapGrid {
    /// Row-major over `v` then `u`, both from 0 to 2.
    pub fn new(grid_n: usize) -> Result<Self> {
        if grid_n < MIN_GRID_N {
            return Err(Error::invalid(format!("grid_n must be at least {MIN_GRID_N}, got {grid_n}")));
        }
        let step = 2.0 / (grid_n - 1) as f64;
        let points: Vec<MapPoint> = (0..grid_n * grid_n)
            .map(|i| MapPoint::new((i % grid_n) as f64 * step, (i / grid_n) as f64 * step))
            .collect::<Result<_>>()?;
        let states: Vec<_> = points
            .par_iter()
            .map(map_state)
            .collect::<Result<_>>()?;
        let klass = states.par_iter().map(|s| classify(s, None).klass).collect();
        Ok(MapGrid {
            grid_n,
            points,
            states,
            klass,
        })
    }

    pub fn render(&self, model: &dyn LossModel) -> MapResult {
        let losses = model.losses(&self.states);
        MapResult {
            grid_n: self.grid_n,
            cells: self
                .points
                .iter()
                .zip(losses)
                .zip(&self.klass)
                .map(|((p, loss), &klass)| MapCell {
                    u: p.u,
                    v: p.v,
                    loss,
                    klass,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapResult {
    pub grid_n: usize,
    pub cells: Vec<MapCell>,
}

pub fn render_map(model: &dyn LossModel, grid_n: usize) -> Result<MapResult> {
    Ok(MapGrid::new(grid_n)?.render(model))
}

/// Cells that count as non-discordant for the overlap score.
pub fn oracle_zero_discord(klass: StateClass) -> bool {
    matches!(klass, StateClass::Product | StateClass::NonDiscordant)
}

impl MapResult {
    /// Intersection over union between `{loss ≤ tau}` and the oracle's
    /// zero-discord cells.
    pub fn iou(&self, tau: f64) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for c in &self.cells {
            let pred = c.loss <= tau;
            let truth = oracle_zero_discord(c.klass);
            inter += (pred && truth) as usize;
            union += (pred || truth) as usize;
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn write_csv<W: Write>(&self, header_comment: &str, mut out: W) -> Result<()> {
        writeln!(out, "# {header_comment}")?;
        writeln!(out, "u,v,loss,klass")?;
        for c in &self.cells {
            writeln!(out, "{},{},{:e},{}", c.u, c.v, c.loss, c.klass.name())?;
        }
        Ok(())
    }

    /// Plain PGM heatmap, min-max normalised, `v = 2` on the top row.
    pub fn write_pgm<W: Write>(&self, header_comment: &str, mut out: W) -> Result<()> {
        let n = self.grid_n;
        let (lo, hi) = self
            .cells
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| (a.min(c.loss), b.max(c.loss)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        writeln!(out, "P2")?;
        writeln!(out, "# {header_comment}")?;
        writeln!(out, "{n} {n}")?;
        writeln!(out, "255")?;
        for row in (0..n).rev() {
            let line: Vec<String> = (0..n)
                .map(|col| {
                    let l = self.cells[row * n + col].loss;
                    (((l - lo) / span) * 255.0).round().clamp(0.0, 255.0).to_string()
                })
                .collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
