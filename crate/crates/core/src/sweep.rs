//! Combination and ablation sweeps: one training run per variant, one CSV row each.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::config::{Ablations, TrainConfig};
use crate::error::{Result, UalError};
use crate::metrics::{EvalReport, SUMMARY_HEADER};
use crate::modality::{ModalityCombo, PhaseCombo};
use crate::parallel::Exec;
use crate::phantom::Sample;
use crate::trainer::{evaluate, train, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Modality,
    Phase,
    Ablation,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Modality => "modality",
            SweepKind::Phase => "phase",
            SweepKind::Ablation => "ablation",
        }
    }

    pub fn header(self) -> String {
        let labels = match self {
            SweepKind::Modality => "t1,t2,dwi",
            SweepKind::Phase => "arterial,pv,delay",
            SweepKind::Ablation => "variant",
        };
        format!("{labels},{SUMMARY_HEADER}")
    }

    /// The six partial combinations and the full set, or the full model and each single ablation.
    pub fn default_variants(self) -> Vec<Variant> {
        match self {
            SweepKind::Modality => ModalityCombo::grid().into_iter().map(Variant::Modalities).collect(),
            SweepKind::Phase => PhaseCombo::grid().into_iter().map(Variant::Phases).collect(),
            SweepKind::Ablation => std::iter::once(Variant::Ablation(None))
                .chain(Ablations::NAMES.into_iter().map(|n| Variant::Ablation(Some(n))))
                .collect(),
        }
    }

    /// Parse a `;`-separated variant list such as `t1;t2,dwi` or `full;fsc`.
    pub fn parse_variants(self, list: &str) -> Result<Vec<Variant>> {
        let mut out: Vec<Variant> = Vec::new();
        for item in list.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let v = match self {
                SweepKind::Modality => Variant::Modalities(item.parse()?),
                SweepKind::Phase => Variant::Phases(item.parse()?),
                SweepKind::Ablation if item == "full" => Variant::Ablation(None),
                SweepKind::Ablation => {
                    let name = Ablations::NAMES
                        .into_iter()
                        .find(|n| *n == item)
                        .ok_or_else(|| UalError::Config(format!("unknown ablation {item:?}")))?;
                    Variant::Ablation(Some(name))
                }
            };
            if out.contains(&v) {
                return Err(UalError::Config(format!("variant {item:?} listed twice")));
            }
            out.push(v);
        }
        if out.is_empty() {
            return Err(UalError::Config("empty variant list".into()));
        }
        Ok(out)
    }
}

impl FromStr for SweepKind {
    type Err = UalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modality" | "modalities" => Ok(SweepKind::Modality),
            "phase" | "phases" => Ok(SweepKind::Phase),
            "ablation" | "ablations" => Ok(SweepKind::Ablation),
            other => Err(UalError::Config(format!("unknown sweep {other:?} (expected modality|phase|ablation)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Modalities(ModalityCombo),
    Phases(PhaseCombo),
    /// `None` is the full model; `Some(name)` disables one component.
    Ablation(Option<&'static str>),
}

fn flag_cells(flags: [bool; 3]) -> Vec<String> {
    flags.iter().map(|&f| (f as u8).to_string()).collect()
}

impl Variant {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match *self {
            Variant::Modalities(m) => cfg.modalities = m,
            Variant::Phases(p) => cfg.phases = p,
            Variant::Ablation(None) => {}
            Variant::Ablation(Some(name)) => cfg.ablations.set(name, false).expect("known component"),
        }
        cfg
    }

    pub fn label_cells(&self) -> Vec<String> {
        match *self {
            Variant::Modalities(m) => flag_cells(m.flags()),
            Variant::Phases(p) => flag_cells(p.flags()),
            Variant::Ablation(None) => vec!["full".into()],
            Variant::Ablation(Some(n)) => vec![format!("no_{n}")],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub variant: Variant,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn csv(&self) -> String {
        let mut s = self.kind.header();
        s.push('\n');
        for row in &self.rows {
            let _ = writeln!(s, "{},{}", row.variant.label_cells().join(","), row.report.summary_row());
        }
        s
    }

    pub fn row(&self, variant: &Variant) -> Option<&SweepRow> {
        self.rows.iter().find(|r| &r.variant == variant)
    }
}

/// Train one model per variant on `train` and evaluate it on `test`.
///
/// With `jobs > 1` variants run concurrently, each on a single thread; the
/// result does not depend on `jobs`.
pub fn run_sweep(kind: SweepKind, variants: &[Variant], base: &TrainConfig, train_set: &[Sample], test_set: &[Sample], jobs: usize) -> Result<SweepResult> {
    let (outer, inner) = if jobs > 1 { (Exec::Parallel, Exec::Sequential) } else { (Exec::Sequential, Exec::Parallel) };
    let run = |v: &Variant| -> Result<SweepRow> {
        let cfg = v.apply(base);
        let opts = TrainOptions { exec: inner, ..TrainOptions::default() };
        let (trainer, _) = train(train_set, &cfg, &opts)?;
        let report = evaluate(&trainer.network, &trainer.params, test_set, inner)?;
        log::info!("{} {}: {}", kind.name(), v.label_cells().join(","), report.summary_row());
        Ok(SweepRow { variant: *v, report })
    };
    let rows = Exec::with_threads(jobs, || outer.map(variants, run));
    Ok(SweepResult {
        kind,
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_have_seven_rows() {
        assert_eq!(SweepKind::Modality.default_variants().len(), 7);
        assert_eq!(SweepKind::Phase.default_variants().len(), 7);
        assert_eq!(SweepKind::Ablation.default_variants().len(), 6);
    }

    #[test]
    fn duplicate_variant_rejected() {
        assert!(SweepKind::Modality.parse_variants("t1;t2;t1").is_err());
        assert!(SweepKind::Modality.parse_variants("t1,dwi;dwi,t1").is_err());
        assert_eq!(SweepKind::Ablation.parse_variants("full;fsc").unwrap().len(), 2);
        assert!(SweepKind::Ablation.parse_variants("gan").is_err());
    }

    #[test]
    fn label_cells_follow_header() {
        let v = SweepKind::Modality.parse_variants("t1,dwi").unwrap()[0];
        assert_eq!(v.label_cells(), vec!["1", "0", "1"]);
        assert_eq!(Variant::Ablation(Some("mpr")).label_cells(), vec!["no_mpr"]);
    }
}
