//! Policy evaluation and reporting.
//!
//! Costs come from greedy decodes or best-of-k stochastic decodes. Sample
//! streams are nested: sample j of instance i always uses the rng derived
//! from (seed, i, j), so enlarging k only adds candidates and the best-of-k
//! cost can never get worse as k grows. Gaps are percentages relative to a
//! reference cost, which must be strictly positive.

use std::io::Write;
use std::path::Path;

use crate::decoder::{decode_eval, DecodeError, DecodeMode};
use crate::instance::Instance;
use crate::model::ModelConfig;
use crate::nn::tensor::Parameters;
use crate::par::map_batch;
use crate::rng::Rng;

#[derive(Debug)]
pub enum EvalError {
    /// Gap is undefined for a non-positive reference cost.
    NonPositiveReference(f64),
    ReferenceCount { refs: usize, instances: usize },
    ZeroSamples,
    Decode(String),
    Io(std::io::Error),
}

impl std::fmt::Display for EvalError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalError::NonPositiveReference(z) => {
                write!(f, "reference cost must be positive, got {z}")
            }
            EvalError::ReferenceCount { refs, instances } => {
                write!(f, "{refs} reference costs for {instances} instances")
            }
            EvalError::ZeroSamples => write!(f, "best-of-k needs k >= 1"),
            EvalError::Decode(m) => write!(f, "evaluation decode failed: {m}"),
            EvalError::Io(e) => write!(f, "report io failed: {e}"),
        }
    }
}

impl std::error::Error for EvalError {}

impl From<DecodeError> for EvalError {
    fn from(e: DecodeError) -> Self {
        EvalError::Decode(e.to_string())
    }
}

impl From<std::io::Error> for EvalError {
    fn from(e: std::io::Error) -> Self {
        EvalError::Io(e)
    }
}

/// Percentage excess of `cost` over the positive reference `reference`.
pub fn gap(cost: f64, reference: f64) -> Result<f64, EvalError> {
    if reference <= 0.0 {
        return Err(EvalError::NonPositiveReference(reference));
    }
    Ok((cost - reference) / reference * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Greedy,
    /// Best cost over k stochastic decodes with nested sample seeds.
    BestOf(usize),
}

/// Cost of one instance under the given mode.
pub fn solve_cost(
    params: &Parameters,
    inst: &Instance,
    cfg: &ModelConfig,
    mode: EvalMode,
    seed: u64,
    index: usize,
) -> Result<f64, EvalError> {
    match mode {
        EvalMode::Greedy => {
            let mut rng = Rng::new(0);
            Ok(decode_eval(params, inst, cfg, DecodeMode::Greedy, &mut rng)?.cost())
        }
        EvalMode::BestOf(k) => {
            if k == 0 {
                return Err(EvalError::ZeroSamples);
            }
            let per_inst = Rng::new(seed).derive(index as u64);
            let mut best = f64::INFINITY;
            for j in 0..k {
                let mut rng = per_inst.derive(j as u64);
                let cost =
                    decode_eval(params, inst, cfg, DecodeMode::Sample, &mut rng)?.cost();
                if cost < best {
                    best = cost;
                }
            }
            Ok(best)
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub instance: usize,
    pub cost: f64,
    pub reference: Option<f64>,
    pub gap_percent: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_cost: f64,
    /// Mean of per-instance gaps; present only when references were given.
    pub mean_gap: Option<f64>,
}

/// Evaluates every instance, attaching gaps when reference costs are given.
pub fn evaluate(
    params: &Parameters,
    insts: &[Instance],
    refs: Option<&[f64]>,
    cfg: &ModelConfig,
    mode: EvalMode,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if let Some(r) = refs {
        if r.len() != insts.len() {
            return Err(EvalError::ReferenceCount { refs: r.len(), instances: insts.len() });
        }
        if let Some(&bad) = r.iter().find(|&&z| z <= 0.0) {
            return Err(EvalError::NonPositiveReference(bad));
        }
    }
    let idx: Vec<usize> = (0..insts.len()).collect();
    let costs: Vec<Result<f64, EvalError>> =
        map_batch(&idx, |&i| solve_cost(params, &insts[i], cfg, mode, seed, i));

    let mut rows = Vec::with_capacity(insts.len());
    let mut total = 0.0;
    let mut total_gap = 0.0;
    for (i, cost) in costs.into_iter().enumerate() {
        let cost = cost?;
        total += cost;
        let reference = refs.map(|r| r[i]);
        let gap_percent = match reference {
            Some(z) => {
                let g = gap(cost, z)?;
                total_gap += g;
                Some(g)
            }
            None => None,
        };
        rows.push(EvalRow { instance: i, cost, reference, gap_percent });
    }
    let count = insts.len().max(1) as f64;
    Ok(EvalReport {
        rows,
        mean_cost: total / count,
        mean_gap: refs.map(|_| total_gap / count),
    })
}

/// Writes the report as CSV; empty reference and gap fields when absent.
pub fn write_csv(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "instance,cost,reference,gap_percent")?;
    for row in &report.rows {
        let reference = row.reference.map(|z| z.to_string()).unwrap_or_default();
        let gp = row.gap_percent.map(|g| g.to_string()).unwrap_or_default();
        writeln!(f, "{},{},{},{}", row.instance, row.cost, reference, gp)?;
    }
    Ok(())
}

/// Renders the report as a fixed-width text table with a mean summary row.
pub fn format_table(report: &EvalReport) -> String {
    let has_refs = report.mean_gap.is_some();
    let mut out = String::new();
    if has_refs {
        out.push_str(&format!(
            "{:>8}  {:>12}  {:>12}  {:>10}\n",
            "instance", "cost", "reference", "gap(%)"
        ));
        for row in &report.rows {
            out.push_str(&format!(
                "{:>8}  {:>12.4}  {:>12.4}  {:>10.2}\n",
                row.instance,
                row.cost,
                row.reference.unwrap(),
                row.gap_percent.unwrap()
            ));
        }
        out.push_str(&format!(
            "{:>8}  {:>12.4}  {:>12}  {:>10.2}\n",
            "mean",
            report.mean_cost,
            "",
            report.mean_gap.unwrap()
        ));
    } else {
        out.push_str(&format!("{:>8}  {:>12}\n", "instance", "cost"));
        for row in &report.rows {
            out.push_str(&format!("{:>8}  {:>12.4}\n", row.instance, row.cost));
        }
        out.push_str(&format!("{:>8}  {:>12.4}\n", "mean", report.mean_cost));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_instances, Family};
    use crate::model::init_actor_params;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig { d_h: 8, heads: 2, layers: 1, d_ff: 16, d_sparse: 4, l_dec: 1 }
    }

    #[test]
    fn gap_matches_hand_arithmetic() {
        assert!((gap(110.0, 100.0).unwrap() - 10.0).abs() < 1e-12);
        assert!((gap(95.0, 100.0).unwrap() + 5.0).abs() < 1e-12);
        assert!(gap(1.0, 0.0).is_err());
        assert!(gap(1.0, -3.0).is_err());
    }

    #[test]
    fn best_of_k_never_worsens_with_more_samples() {
        let cfg = tiny_cfg();
        let params = init_actor_params(&cfg, 3);
        let insts = generate_instances(6, 5, 77, Family::CornerDepot, 1.0, 2.0)
            .unwrap()
            .instances;
        for (i, inst) in insts.iter().enumerate() {
            let c1 = solve_cost(&params, inst, &cfg, EvalMode::BestOf(1), 9, i).unwrap();
            let c4 = solve_cost(&params, inst, &cfg, EvalMode::BestOf(4), 9, i).unwrap();
            let c16 = solve_cost(&params, inst, &cfg, EvalMode::BestOf(16), 9, i).unwrap();
            assert!(c4 <= c1 + 1e-12, "instance {i}: {c4} > {c1}");
            assert!(c16 <= c4 + 1e-12, "instance {i}: {c16} > {c4}");
        }
    }

    #[test]
    fn evaluate_attaches_gaps_and_means() {
        let cfg = tiny_cfg();
        let params = init_actor_params(&cfg, 3);
        let insts = generate_instances(5, 3, 5, Family::CornerDepot, 1.0, 2.0)
            .unwrap()
            .instances;
        let greedy = evaluate(&params, &insts, None, &cfg, EvalMode::Greedy, 0).unwrap();
        assert!(greedy.mean_gap.is_none());
        let refs: Vec<f64> = greedy.rows.iter().map(|r| r.cost).collect();
        let report =
            evaluate(&params, &insts, Some(&refs), &cfg, EvalMode::Greedy, 0).unwrap();
        let mg = report.mean_gap.unwrap();
        assert!(mg.abs() < 1e-9, "self-reference gap should vanish, got {mg}");
    }

    #[test]
    fn csv_and_table_round_numbers_consistently() {
        let report = EvalReport {
            rows: vec![EvalRow {
                instance: 0,
                cost: 12.5,
                reference: Some(10.0),
                gap_percent: Some(25.0),
            }],
            mean_cost: 12.5,
            mean_gap: Some(25.0),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        write_csv(&report, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "instance,cost,reference,gap_percent");
        assert!(text.contains("0,12.5,10,25"));
        let table = format_table(&report);
        assert!(table.contains("gap(%)"));
        assert!(table.contains("mean"));
    }

    #[test]
    fn mismatched_reference_count_is_an_error() {
        let cfg = tiny_cfg();
        let params = init_actor_params(&cfg, 3);
        let insts = generate_instances(5, 2, 5, Family::CornerDepot, 1.0, 2.0)
            .unwrap()
            .instances;
        let refs = [1.0];
        assert!(matches!(
            evaluate(&params, &insts, Some(&refs), &cfg, EvalMode::Greedy, 0),
            Err(EvalError::ReferenceCount { .. })
        ));
    }
}
