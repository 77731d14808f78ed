use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EncoderVariant;
use crate::train::LogRow;

use super::artifacts::CsvArtifact;
use super::config::RunConfig;
use super::train_cmd;

/// The four encoder × objective combinations compared by `ablate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Transformer with the causal loss.
    Can,
    TransformerNoCausal,
    CausalRnn,
    RnnNoCausal,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Can,
        Variant::TransformerNoCausal,
        Variant::CausalRnn,
        Variant::RnnNoCausal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Can => "can",
            Variant::TransformerNoCausal => "transformer_no_causal",
            Variant::CausalRnn => "causal_rnn",
            Variant::RnnNoCausal => "rnn_no_causal",
        }
    }

    pub fn is_causal(self) -> bool {
        matches!(self, Variant::Can | Variant::CausalRnn)
    }

    pub fn encoder(self) -> EncoderVariant {
        match self {
            Variant::Can | Variant::TransformerNoCausal => EncoderVariant::Transformer,
            Variant::CausalRnn | Variant::RnnNoCausal => EncoderVariant::Rnn,
        }
    }

    /// The same variant with the causal loss switched off.
    pub fn baseline(self) -> Variant {
        match self {
            Variant::Can | Variant::TransformerNoCausal => Variant::TransformerNoCausal,
            Variant::CausalRnn | Variant::RnnNoCausal => Variant::RnnNoCausal,
        }
    }

    /// Causal variants keep the configured `ppo.alpha`; the others set it to 0.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.agent.encoder = self.encoder();
        if !self.is_causal() {
            cfg.ppo.alpha = 0.0;
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let known: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
            Error::Config(format!("unknown variant {s:?} (expected one of {})", known.join(", ")))
        })
    }
}

/// Parses `0..4` (inclusive) or `0,2,5` into a seed list.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seeds {spec:?}; use a..b or a,b,c"));
    let spec = spec.trim();
    if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub steps: u64,
    pub sr: f64,
    pub spl: f64,
    pub gd: f64,
    pub log: Vec<LogRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; 0 for a single value.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantStats {
    pub variant: Variant,
    pub runs: usize,
    pub sr: MeanStd,
    pub spl: MeanStd,
    pub gd: MeanStd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub sr_mean: f64,
    pub sr_std: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSummary {
    pub runs: Vec<RunResult>,
    pub stats: Vec<VariantStats>,
    pub curves: BTreeMap<Variant, Vec<CurvePoint>>,
}

impl AblationSummary {
    pub fn from_runs(runs: Vec<RunResult>) -> Self {
        let mut variants: Vec<Variant> = runs.iter().map(|r| r.variant).collect();
        variants.dedup();
        let mut stats = Vec::new();
        let mut curves = BTreeMap::new();
        for v in variants {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.variant == v).collect();
            let col = |f: fn(&RunResult) -> f64| mine.iter().map(|r| f(r)).collect::<Vec<_>>();
            stats.push(VariantStats {
                variant: v,
                runs: mine.len(),
                sr: MeanStd::of(&col(|r| r.sr)),
                spl: MeanStd::of(&col(|r| r.spl)),
                gd: MeanStd::of(&col(|r| r.gd)),
            });
            let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for r in &mine {
                for row in &r.log {
                    by_step.entry(row.step).or_default().push(row.sr);
                }
            }
            let points = by_step
                .into_iter()
                .map(|(step, srs)| {
                    let m = MeanStd::of(&srs);
                    CurvePoint {
                        step,
                        sr_mean: m.mean,
                        sr_std: m.std,
                        runs: srs.len(),
                    }
                })
                .collect();
            curves.insert(v, points);
        }
        Self { runs, stats, curves }
    }

    pub fn stats_for(&self, v: Variant) -> Option<&VariantStats> {
        self.stats.iter().find(|s| s.variant == v)
    }

    pub fn run(&self, v: Variant, seed: u64) -> Option<&RunResult> {
        self.runs.iter().find(|r| r.variant == v && r.seed == seed)
    }
}

pub const SUMMARY_FILE: &str = "summary.csv";

pub fn curve_file(v: Variant) -> String {
    format!("curve_{v}.csv")
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    variant: &'a str,
    seed: String,
    steps: u64,
    sr: f64,
    spl: f64,
    gd: f64,
}

/// Trains every `(variant, seed)` pair under `out_dir/<variant>/seed_<s>`,
/// then writes `summary.csv` (per-run finals plus mean and std rows) and one
/// SR-vs-steps curve per variant.
pub fn ablate_cmd(base: &RunConfig, variants: &[Variant], seeds: &[u64], out_dir: &Path) -> Result<AblationSummary> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablate needs at least one variant and one seed".into()));
    }
    base.validate()?;
    let _lock = super::DirLock::acquire(out_dir)?;
    let mut runs = Vec::new();
    for &v in variants {
        for &seed in seeds {
            let mut cfg = v.apply(base);
            cfg.seed = seed;
            cfg.output_dir = out_dir.join(v.name()).join(format!("seed_{seed}"));
            log::info!("ablate: {v} seed {seed}");
            let done = train_cmd(&cfg)?;
            let last = done
                .outcome
                .log
                .last()
                .ok_or_else(|| Error::Config("ablation runs need total_steps > 0".into()))?;
            runs.push(RunResult {
                variant: v,
                seed,
                steps: done.outcome.steps,
                sr: last.sr,
                spl: last.spl,
                gd: last.gd,
                log: done.outcome.log.clone(),
            });
        }
    }
    let summary = AblationSummary::from_runs(runs);
    let prov = base.provenance_line();
    let mut out = CsvArtifact::create(&out_dir.join(SUMMARY_FILE), &prov)?;
    out.header(&["variant", "seed", "steps", "sr", "spl", "gd"])?;
    for r in &summary.runs {
        out.row(&SummaryRow {
            variant: r.variant.name(),
            seed: r.seed.to_string(),
            steps: r.steps,
            sr: r.sr,
            spl: r.spl,
            gd: r.gd,
        })?;
    }
    for s in &summary.stats {
        let steps = summary
            .runs
            .iter()
            .find(|r| r.variant == s.variant)
            .map_or(0, |r| r.steps);
        for (label, pick) in [("mean", 0), ("std", 1)] {
            let f = |m: MeanStd| if pick == 0 { m.mean } else { m.std };
            out.row(&SummaryRow {
                variant: s.variant.name(),
                seed: label.into(),
                steps,
                sr: f(s.sr),
                spl: f(s.spl),
                gd: f(s.gd),
            })?;
        }
    }
    for (v, points) in &summary.curves {
        let mut c = CsvArtifact::create(&out_dir.join(curve_file(*v)), &prov)?;
        c.header(&["step", "sr_mean", "sr_std", "runs"])?;
        for p in points {
            c.row(p)?;
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_specs() {
        assert_eq!(parse_seeds("0..4").unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(parse_seeds("3, 1").unwrap(), vec![3, 1]);
        assert!(parse_seeds("4..0").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn variants_round_trip_and_reject_unknown() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        let err = "lstm".parse::<Variant>().unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn apply_sets_encoder_and_alpha() {
        let base = RunConfig::default();
        let c = Variant::RnnNoCausal.apply(&base);
        assert_eq!(c.agent.encoder, EncoderVariant::Rnn);
        assert_eq!(c.ppo.alpha, 0.0);
        assert_eq!(Variant::Can.apply(&base).ppo.alpha, base.ppo.alpha);
    }

    #[test]
    fn mean_std_uses_sample_deviation() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[5.0]).std, 0.0);
    }
}
