use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    run, AblationSpec, ExperimentError, FeatureName, Method, Providers, RunConfig, RunResult,
};
use crate::metrics::fmt1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationSuite {
    StepImportance,
    StepCombinations,
    StepOrder,
    PromptFeatures,
}

impl AblationSuite {
    pub const ALL: [AblationSuite; 4] = [
        Self::StepImportance,
        Self::StepCombinations,
        Self::StepOrder,
        Self::PromptFeatures,
    ];

    pub fn variants(self) -> Vec<AblationSpec> {
        match self {
            Self::StepImportance => (1..=7).map(AblationSpec::RemoveStep).collect(),
            Self::StepCombinations => vec![
                AblationSpec::RetainSteps(vec![1, 3, 6]),
                AblationSpec::RetainSteps(vec![1, 3]),
                AblationSpec::RetainSteps(vec![2, 4, 5]),
            ],
            Self::StepOrder => vec![
                AblationSpec::SwapSteps(3, 6),
                AblationSpec::SwapSteps(1, 4),
                AblationSpec::SwapSteps(5, 7),
            ],
            Self::PromptFeatures => [
                FeatureName::OneShotExample,
                FeatureName::InstructionReinforcement,
                FeatureName::SpecializedMarkers,
                FeatureName::AllFeatures,
            ]
            .into_iter()
            .map(AblationSpec::DisableFeature)
            .collect(),
        }
    }

    /// The feature table reports the relative change only.
    pub fn percent_only(self) -> bool {
        self == Self::PromptFeatures
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::StepImportance => "step-importance",
            Self::StepCombinations => "step-combinations",
            Self::StepOrder => "step-order",
            Self::PromptFeatures => "prompt-features",
        }
    }
}

impl fmt::Display for AblationSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationSuite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|suite| suite.name() == key)
            .ok_or_else(|| format!("unknown ablation suite `{s}`"))
    }
}

/// Drop of a variant relative to its baseline; positive means worse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub delta: f64,
    /// `delta / baseline * 100`; undefined for a zero baseline.
    pub percent: Option<f64>,
}

pub fn delta(baseline: f64, variant: f64) -> Delta {
    let d = baseline - variant;
    Delta {
        delta: d,
        percent: (baseline != 0.0).then(|| d / baseline * 100.0),
    }
}

impl Delta {
    /// `↓ 5.1 (7.1%)`, or `↓ 6.0%` when `percent_only`. Gains use `↑`.
    pub fn display(&self, percent_only: bool) -> String {
        let percent = match self.percent {
            Some(p) => format!("{}%", fmt1(p.abs())),
            None => "n/a".to_string(),
        };
        let arrow = if self.delta > 0.0 {
            "↓"
        } else if self.delta < 0.0 {
            "↑"
        } else {
            "="
        };
        if percent_only {
            format!("{arrow} {percent}")
        } else {
            format!("{arrow} {} ({percent})", fmt1(self.delta.abs()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub spec: Option<AblationSpec>,
    pub digest: String,
    pub words_composition: f64,
    pub factuality: f64,
    /// Absent on the baseline row.
    pub delta: Option<Delta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub suite: AblationSuite,
    pub model: String,
    pub baseline: AblationRow,
    pub rows: Vec<AblationRow>,
}

fn row(
    variant: String,
    spec: Option<AblationSpec>,
    result: &RunResult,
    baseline: Option<f64>,
) -> AblationRow {
    AblationRow {
        variant,
        spec,
        digest: result.digest.clone(),
        words_composition: result.overall.words_composition,
        factuality: result.overall.factuality,
        delta: baseline.map(|b| delta(b, result.overall.factuality)),
    }
}

/// Runs the unmodified configuration, then every variant of `suite` in
/// order. Variants run one after another so they share a warm cache.
pub fn ablation_suite(
    base: &RunConfig,
    suite: AblationSuite,
    providers: &Providers,
) -> Result<AblationTable, ExperimentError> {
    if base.method != Method::MedSoCoT {
        return Err(ExperimentError::Config(
            "ablations require the MedSoCoT method".into(),
        ));
    }
    if base.ablation.is_some() {
        return Err(ExperimentError::Config(
            "the base configuration must not carry an ablation".into(),
        ));
    }
    let baseline = run(base, providers)?;
    let baseline_factuality = baseline.overall.factuality;
    let mut rows = Vec::new();
    for spec in suite.variants() {
        let config = RunConfig {
            ablation: Some(spec.clone()),
            label: None,
            ..base.clone()
        };
        log::info!("ablation {suite}: {}", spec.label());
        let result = run(&config, providers)?;
        rows.push(row(
            spec.label(),
            Some(spec),
            &result,
            Some(baseline_factuality),
        ));
    }
    Ok(AblationTable {
        suite,
        model: providers.llm.model_id().to_string(),
        baseline: row("Baseline".into(), None, &baseline, None),
        rows,
    })
}

impl AblationTable {
    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "<!-- baseline config digest: {} -->\n",
            self.baseline.digest
        );
        out.push_str(&format!("| {} | Factuality Score | Δ |\n", self.model));
        out.push_str("|---|---:|---|\n");
        out.push_str(&format!(
            "| {} | {} | - |\n",
            self.baseline.variant,
            fmt1(self.baseline.factuality)
        ));
        for r in &self.rows {
            let d = r
                .delta
                .map_or("-".to_string(), |d| d.display(self.suite.percent_only()));
            out.push_str(&format!(
                "| {} | {} | {} |\n",
                r.variant,
                fmt1(r.factuality),
                d
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,digest,words_composition,factuality,delta,percent\n");
        for r in std::iter::once(&self.baseline).chain(&self.rows) {
            let (d, p) = match r.delta {
                Some(d) => (fmt1(d.delta), d.percent.map(fmt1).unwrap_or_default()),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                csv_field(&r.variant),
                r.digest,
                fmt1(r.words_composition),
                fmt1(r.factuality),
                d,
                p
            ));
        }
        out
    }
}

pub(super) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_display() {
        assert_eq!(delta(71.6, 66.5).display(false), "↓ 5.1 (7.1%)");
        assert_eq!(delta(71.6, 55.0).display(false), "↓ 16.6 (23.2%)");
        assert_eq!(delta(69.4, 65.2).display(true), "↓ 6.0%");
        assert_eq!(delta(71.6, 71.6).display(false), "= 0.0 (0.0%)");
        assert_eq!(delta(50.0, 60.0).display(false), "↑ 10.0 (20.0%)");
        assert_eq!(delta(0.0, 5.0).display(false), "↑ 5.0 (n/a)");
    }

    #[test]
    fn delta_is_antisymmetric() {
        for (a, b) in [(71.6, 66.5), (10.0, 90.0), (33.3, 33.3)] {
            assert_eq!(delta(a, b).delta, -delta(b, a).delta);
        }
    }

    #[test]
    fn suite_variants() {
        assert_eq!(AblationSuite::StepImportance.variants().len(), 7);
        assert_eq!(
            AblationSuite::StepCombinations.variants()[0].label(),
            "Step 1 + Step 3 + Step 6"
        );
        assert_eq!(
            AblationSuite::StepOrder.variants()[0].label(),
            "Step 3 ↔ Step 6"
        );
        assert_eq!(
            AblationSuite::PromptFeatures.variants()[3].label(),
            "w/o All Features"
        );
        assert_eq!(
            "step_order".parse::<AblationSuite>().unwrap(),
            AblationSuite::StepOrder
        );
    }
}
