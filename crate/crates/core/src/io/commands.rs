use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentName, GramFormat, KernelKind};
use super::verify::{gaussian_points, run_verification, VerifyReport, MC_SIGMAS};
use crate::arch::{ArchSpec, Family, GateRouting, Network, ParamSet, ParamSubset};
use crate::error::{Error, Result};
use crate::kernels::{
    gram, npk, ntk, ntk_expectation_mc, ntk_target, relu_gates, GramMatrix, McConfig,
};
use crate::numerics::{median, InitScheme, RngState, RunningStats, RNG_ALGORITHM};
use crate::train::{evaluate_with_routing, train, Regime, TrainOutcome, TrainedModel};

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs the verification suite and writes `verify.json`.
pub fn cmd_verify(cfg: &ExperimentConfig) -> Result<VerifyReport> {
    ensure_dir(&cfg.out_dir)?;
    let report = run_verification(&cfg.verify, cfg.seed)?;
    write_json(&cfg.out_dir.join("verify.json"), &report)?;
    Ok(report)
}

/// Trains one model and writes `train_report.json` and `params.json`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    ensure_dir(&cfg.out_dir)?;
    let (train_set, test_set) = cfg.dataset.load(cfg.seed)?;
    let tc = cfg.train.to_train_config(&cfg.arch, cfg.seed);
    let outcome = train(&tc, &train_set, (!test_set.is_empty()).then_some(&test_set))?;
    write_json(&cfg.out_dir.join("train_report.json"), &outcome.report)?;
    write_json(&cfg.out_dir.join("params.json"), &outcome.model)?;
    Ok(outcome)
}

/// Reads back the parameters written by [`cmd_train`].
pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Gram matrix of the configured kernel over the first `kernel.points`
/// training inputs, gates from a ReLU network initialised from the seed.
/// Writes `gram.csv` and/or `gram.npkg`.
pub fn cmd_kernel(cfg: &ExperimentConfig) -> Result<GramMatrix> {
    ensure_dir(&cfg.out_dir)?;
    let arch = cfg.arch.clone().with_heads(1);
    let (train_set, _) = cfg.dataset.load(cfg.seed)?;
    if train_set.d_in() != arch.d_in {
        return Err(Error::DimensionMismatch {
            context: "dataset width vs d_in",
            expected: arch.d_in,
            actual: train_set.d_in(),
        });
    }
    let n = cfg.kernel.points.min(train_set.len());
    let points = &train_set.inputs[..n];
    let mut rng = RngState::stream(cfg.seed, 2);
    let params = ParamSet::init(&arch, InitScheme::Bernoulli, &mut rng)?;
    let g = match cfg.kernel.kind {
        KernelKind::Npk => {
            let gates = points
                .iter()
                .map(|x| relu_gates(&arch, &params, x))
                .collect::<Result<Vec<_>>>()?;
            let index = |x: &[f64]| {
                points
                    .iter()
                    .position(|p| p.as_slice() == x)
                    .expect("Gram point")
            };
            gram(points, "npk", cfg.kernel.cap, |x, y| {
                npk(&arch, x, y, &gates[index(x)], &gates[index(y)])
            })?
        }
        KernelKind::Ntk => {
            let net = Network::Relu {
                arch: &arch,
                params: &params,
            };
            gram(points, "ntk", cfg.kernel.cap, |x, y| {
                ntk(&net, ParamSubset::Value, x, y)
            })?
        }
    };
    if matches!(cfg.kernel.format, GramFormat::Csv | GramFormat::Both) {
        g.save_csv(&cfg.out_dir.join("gram.csv"))?;
    }
    if matches!(cfg.kernel.format, GramFormat::Binary | GramFormat::Both) {
        g.save_binary(&cfg.out_dir.join("gram.npkg"))?;
    }
    Ok(g)
}

/// One training run of a permutation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationRecord {
    pub permutation: Vec<usize>,
    pub seed: u64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Test accuracy when evaluated with the identity routing instead.
    pub identity_routing_accuracy: f64,
}

/// One training run of the constant-one comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantOneRecord {
    pub regime: Regime,
    pub const_one: bool,
    pub seed: u64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Monte-Carlo NTK deviation at one width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthRecord {
    pub width: usize,
    /// Median over input pairs of each pair's median single-draw relative
    /// deviation from the target.
    pub median_rel_dev: f64,
    /// Standard error of the per-pair deviations.
    pub stderr: f64,
    /// Fraction of pairs whose Monte-Carlo mean is within three standard
    /// errors of the target.
    pub within_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExperimentRecords {
    Permutation(Vec<PermutationRecord>),
    ConstantOne(Vec<ConstantOneRecord>),
    Width(Vec<WidthRecord>),
}

/// Mean test accuracy of one group of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub runs: usize,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: ExperimentName,
    pub seed: u64,
    pub rng: String,
    pub config: ExperimentConfig,
    pub records: ExperimentRecords,
    pub summary: Vec<GroupSummary>,
}

fn summarize<'a>(group: String, values: impl Iterator<Item = &'a f64>) -> GroupSummary {
    let stats: RunningStats = values.copied().collect();
    GroupSummary {
        group,
        runs: stats.count() as usize,
        mean: stats.mean(),
        std_error: stats.std_error(),
    }
}

/// All orderings of `0..n`, identity first.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

fn seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.experiment.seeds as u64)
        .map(|s| cfg.seed + s)
        .collect()
}

/// Runs the named experiment bundle and writes `experiment.json` plus one
/// CSV for plotting.
pub fn cmd_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    ensure_dir(&cfg.out_dir)?;
    let (records, summary, csv_name, csv) = match cfg.experiment.name {
        ExperimentName::PermutationSweep => permutation_sweep(cfg)?,
        ExperimentName::ConstantOne => constant_one(cfg)?,
        ExperimentName::WidthSweep => width_sweep(cfg)?,
    };
    write_text(&cfg.out_dir.join(csv_name), &csv)?;
    let report = ExperimentReport {
        name: cfg.experiment.name,
        seed: cfg.seed,
        rng: RNG_ALGORITHM.to_string(),
        config: cfg.clone(),
        records,
        summary,
    };
    write_json(&cfg.out_dir.join("experiment.json"), &report)?;
    Ok(report)
}

type Bundle = (ExperimentRecords, Vec<GroupSummary>, &'static str, String);

fn permutation_sweep(cfg: &ExperimentConfig) -> Result<Bundle> {
    if !matches!(cfg.arch.family, Family::Fc { .. }) {
        return Err(Error::Config(
            "permutation-sweep needs a fully connected architecture".into(),
        ));
    }
    let layers = cfg.arch.hidden_gate_count();
    let perms = permutations(layers);
    let jobs: Vec<(Vec<usize>, u64)> = perms
        .iter()
        .flat_map(|p| seeds(cfg).into_iter().map(move |s| (p.clone(), s)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|(perm, seed)| {
            let (train_set, test_set) = cfg.dataset.load(*seed)?;
            let mut tc = cfg.train.to_train_config(&cfg.arch, *seed);
            tc.regime = Regime::Dlgn;
            tc.routing = perm.clone();
            let out = train(&tc, &train_set, None)?;
            let test_accuracy = evaluate_with_routing(&out.model, &test_set, &tc.gate_routing())?;
            let identity = GateRouting::identity().with_const_one(tc.const_one);
            Ok(PermutationRecord {
                permutation: perm.clone(),
                seed: *seed,
                train_accuracy: out.report.final_train_accuracy,
                test_accuracy,
                identity_routing_accuracy: evaluate_with_routing(&out.model, &test_set, &identity)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = perms
        .iter()
        .map(|p| {
            summarize(
                format!("{p:?}"),
                records
                    .iter()
                    .filter(|r| &r.permutation == p)
                    .map(|r| &r.test_accuracy),
            )
        })
        .collect();
    let mut csv =
        String::from("permutation,seed,train_accuracy,test_accuracy,identity_routing_accuracy\n");
    for r in &records {
        let perm: Vec<String> = r.permutation.iter().map(|i| i.to_string()).collect();
        csv += &format!(
            "{},{},{},{},{}\n",
            perm.join("-"),
            r.seed,
            r.train_accuracy,
            r.test_accuracy,
            r.identity_routing_accuracy
        );
    }
    Ok((
        ExperimentRecords::Permutation(records),
        summary,
        "permutation_sweep.csv",
        csv,
    ))
}

fn constant_one(cfg: &ExperimentConfig) -> Result<Bundle> {
    let variants = [
        (Regime::DgnStandalone, false),
        (Regime::DgnStandalone, true),
        (Regime::Dlgn, false),
        (Regime::Dlgn, true),
    ];
    let jobs: Vec<(Regime, bool, u64)> = variants
        .iter()
        .flat_map(|&(r, c)| seeds(cfg).into_iter().map(move |s| (r, c, s)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(regime, const_one, seed)| {
            let (train_set, test_set) = cfg.dataset.load(seed)?;
            let mut tc = cfg.train.to_train_config(&cfg.arch, seed);
            tc.regime = regime;
            tc.const_one = const_one;
            let out = train(&tc, &train_set, Some(&test_set))?;
            Ok(ConstantOneRecord {
                regime,
                const_one,
                seed,
                train_accuracy: out.report.final_train_accuracy,
                test_accuracy: out.report.final_test_accuracy.unwrap_or(f64::NAN),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = variants
        .iter()
        .map(|&(regime, const_one)| {
            let input = if const_one { "1" } else { "x" };
            summarize(
                format!("{}(x,{input})", regime.name()),
                records
                    .iter()
                    .filter(|r| r.regime == regime && r.const_one == const_one)
                    .map(|r| &r.test_accuracy),
            )
        })
        .collect();
    let mut csv = String::from("regime,const_one,seed,train_accuracy,test_accuracy\n");
    for r in &records {
        csv += &format!(
            "{},{},{},{},{}\n",
            r.regime.name(),
            r.const_one,
            r.seed,
            r.train_accuracy,
            r.test_accuracy
        );
    }
    Ok((
        ExperimentRecords::ConstantOne(records),
        summary,
        "constant_one.csv",
        csv,
    ))
}

/// Monte-Carlo NTK deviation for one width: random Bernoulli feature
/// network for the gates, Gaussian input pairs. Inputs come from a stream
/// that depends on `seed` only; pairs whose target is exactly zero are
/// passed over until `pairs` usable ones are found.
pub fn width_point(
    d_in: usize,
    depth: usize,
    width: usize,
    pairs: usize,
    samples: usize,
    seed: u64,
) -> Result<WidthRecord> {
    let arch = ArchSpec::fc(d_in, depth, width);
    let mut input_rng = RngState::stream(seed, u64::MAX);
    let mut rng = RngState::stream(seed, width as u64);
    let feature = ParamSet::init(&arch, InitScheme::Bernoulli, &mut rng)?;
    let mut devs = Vec::with_capacity(pairs);
    let mut hits = 0;
    let mut drawn = 0;
    while devs.len() < pairs {
        if drawn == 50 * pairs.max(1) {
            return Err(Error::invalid(format!(
                "found only {} input pairs with a nonzero kernel target at width {width}",
                devs.len()
            )));
        }
        drawn += 1;
        let pair = gaussian_points(2, d_in, &mut input_rng);
        let gx = relu_gates(&arch, &feature, &pair[0])?;
        let gy = relu_gates(&arch, &feature, &pair[1])?;
        if ntk_target(&arch, &pair[0], &pair[1], &gx, &gy)?.value == 0.0 {
            continue;
        }
        let mc = McConfig {
            samples,
            seed: seed.wrapping_mul(7919).wrapping_add(drawn as u64),
            sigma_scale: 1.0,
        };
        let est = ntk_expectation_mc(&arch, &gx, &gy, &pair[0], &pair[1], &mc)?;
        devs.push(est.median_rel_dev());
        hits += est.within(MC_SIGMAS) as usize;
    }
    let stats: RunningStats = devs.iter().copied().collect();
    Ok(WidthRecord {
        width,
        median_rel_dev: median(&devs),
        stderr: stats.std_error(),
        within_fraction: hits as f64 / devs.len().max(1) as f64,
    })
}

fn width_sweep(cfg: &ExperimentConfig) -> Result<Bundle> {
    let e = &cfg.experiment;
    let records = e
        .widths
        .iter()
        .map(|&w| {
            width_point(
                e.sweep_d_in,
                e.sweep_depth,
                w,
                e.sweep_pairs,
                e.mc_samples,
                cfg.seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("width,median_rel_dev,stderr\n");
    for r in &records {
        csv += &format!("{},{},{}\n", r.width, r.median_rel_dev, r.stderr);
    }
    Ok((
        ExperimentRecords::Width(records),
        Vec::new(),
        "width_sweep.csv",
        csv,
    ))
}
