use std::fmt::Write as _;

use serde::Serialize;

use super::eval::evaluate;
use super::run::train;
use super::{Mode, TrainConfig};
use crate::data::DatasetFile;
use crate::encoder::{Domain, Split};
use crate::error::Result;

/// One clustering schedule to compare.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AblationCondition {
    pub name: String,
    pub k_schedule: Vec<usize>,
}

impl AblationCondition {
    pub fn new(k_schedule: Vec<usize>) -> Self {
        let ks: Vec<String> = k_schedule.iter().map(usize::to_string).collect();
        Self {
            name: format!("M={} k=({})", k_schedule.len(), ks.join(",")),
            k_schedule,
        }
    }
}

/// Single-round schedules with 33, 64 and 128 clusters, and three rounds of
/// 64, 128 and 256.
pub fn default_conditions() -> Vec<AblationCondition> {
    [vec![33], vec![64], vec![128], vec![64, 128, 256]]
        .into_iter()
        .map(AblationCondition::new)
        .collect()
}

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub condition: AblationCondition,
    /// Target test accuracy of the best checkpoint, per seed.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition,k_schedule,mean,std,accuracies\n");
        for r in &self.rows {
            let ks: Vec<String> = r.condition.k_schedule.iter().map(usize::to_string).collect();
            let accs: Vec<String> = r.accuracies.iter().map(|a| format!("{a:?}")).collect();
            writeln!(
                out,
                "\"{}\",{},{:?},{:?},{}",
                r.condition.name,
                ks.join(" "),
                r.mean,
                r.std,
                accs.join(" ")
            )
            .unwrap();
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            writeln!(
                out,
                "{:<20} {:6.2} ± {:5.2}  (n = {})",
                r.condition.name,
                100.0 * r.mean,
                100.0 * r.std,
                r.accuracies.len()
            )
            .unwrap();
        }
        out
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains the PCTL mode once per (condition, seed). Every condition is
/// validated before any training starts.
pub fn run_ablation(
    cfg: &TrainConfig,
    data: &DatasetFile,
    conditions: &[AblationCondition],
    seeds: &[u64],
) -> Result<AblationTable> {
    let configs: Vec<TrainConfig> = conditions
        .iter()
        .map(|c| {
            let mut run = cfg.clone();
            run.train.mode = Mode::Pctl;
            run.cluster.k_schedule = c.k_schedule.clone();
            run.validate().map(|_| run)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(conditions.len());
    for (cond, base) in conditions.iter().zip(configs) {
        let mut accuracies = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut run = base.clone();
            run.train.seed = seed;
            let out = train(&run, data)?;
            let acc = evaluate(&out.best, data, Domain::Target, Split::Test)?.accuracy;
            log::info!("{} seed {seed}: test accuracy {acc:.4}", cond.name);
            accuracies.push(acc);
        }
        let (mean, std) = mean_std(&accuracies);
        rows.push(AblationRow {
            condition: cond.clone(),
            accuracies,
            mean,
            std,
        });
    }
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}
