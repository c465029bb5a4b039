use clap::Args;
use hornn_core::gradlab::{decay_compare, finite_diff_check, DecaySetup, GradCheckOptions, GradCheckReport};
use hornn_core::{CellConfig, CellKind};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::{out_file, write_csv, write_json, KindSpec};
use crate::OutArgs;

/// Pass threshold on the per-tensor relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Kinds to check, comma separated; all eight when omitted.
    #[arg(long, value_delimiter = ',')]
    pub kind: Vec<String>,
    #[arg(long, default_value_t = 3)]
    pub dx: usize,
    #[arg(long, default_value_t = 4)]
    pub dh: usize,
    /// Projection size for projected kinds.
    #[arg(long, default_value_t = 2)]
    pub dp: usize,
    #[arg(long, default_value_t = 12)]
    pub steps: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Uniform init range ±scale for the checked parameters.
    #[arg(long, default_value_t = 1.0)]
    pub init_scale: f64,
    /// Add 0.1 to one analytic gradient entry; the check must then fail.
    #[arg(long)]
    pub corrupt: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

fn layer(spec: KindSpec, d_x: usize, d_h: usize, d_p: usize) -> CellConfig {
    let mut c = if spec.kind.is_projected() {
        CellConfig::projected(spec.kind, d_x, d_h, d_p)
    } else {
        CellConfig::new(spec.kind, d_x, d_h)
    };
    c.activation = spec.activation.unwrap_or(c.activation);
    c
}

#[derive(Serialize)]
struct KindSummary {
    kind: String,
    max_rel_err: f64,
    max_entry_rel_err: f64,
    seeds: Vec<u64>,
    pass: bool,
}

#[derive(Serialize)]
struct GradcheckFile {
    tolerance: f64,
    corrupt: bool,
    summaries: Vec<KindSummary>,
    reports: Vec<GradCheckReport>,
}

pub fn gradcheck(args: &GradcheckArgs) -> CliResult<()> {
    let specs: Vec<KindSpec> = if args.kind.is_empty() {
        CellKind::ALL.iter().map(|&kind| KindSpec { kind, activation: None }).collect()
    } else {
        args.kind.iter().map(|k| KindSpec::parse(k)).collect::<CliResult<_>>()?
    };
    if args.seeds.is_empty() {
        return Err(CliError::Config("need at least one seed".into()));
    }
    let configs: Vec<CellConfig> = specs.iter().map(|&s| layer(s, args.dx, args.dh, args.dp)).collect();
    for c in &configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|i| args.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let opts = GradCheckOptions {
                seed,
                steps: args.steps,
                init_scale: args.init_scale,
                corrupt: args.corrupt,
                ..Default::default()
            };
            finite_diff_check(configs[i], &opts)
        })
        .collect::<hornn_core::Result<Vec<_>>>()?;

    let summaries: Vec<KindSummary> = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let mine = &reports[i * args.seeds.len()..(i + 1) * args.seeds.len()];
            let max_rel_err = mine.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
            KindSummary {
                kind: spec.label(),
                max_rel_err,
                max_entry_rel_err: mine.iter().map(|r| r.max_entry_rel_err).fold(0.0, f64::max),
                seeds: args.seeds.clone(),
                pass: max_rel_err < GRADCHECK_TOLERANCE,
            }
        })
        .collect();
    for s in &summaries {
        println!("{}", serde_json::to_string(s)?);
    }
    let failed: Vec<String> = summaries.iter().filter(|s| !s.pass).map(|s| s.kind.clone()).collect();
    if let Some(path) = out_file(&args.out.out, "gradcheck.json")? {
        write_json(&path, &GradcheckFile {
            tolerance: GRADCHECK_TOLERANCE,
            corrupt: args.corrupt,
            summaries,
            reports,
        })?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("gradient check failed for {}", failed.join(", "))))
    }
}

#[derive(Args, Debug)]
pub struct LagcurveArgs {
    /// Kinds to compare, comma separated; the first is the baseline.
    #[arg(long, value_delimiter = ',', default_value = "rnn,hornn-sigmoid")]
    pub kind: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub dx: usize,
    #[arg(long, default_value_t = 32)]
    pub dh: usize,
    /// Projection size for projected kinds.
    #[arg(long, default_value_t = 16)]
    pub dp: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    /// Largest lag K.
    #[arg(long, default_value_t = 19)]
    pub k: usize,
    /// Probe length T.
    #[arg(long, default_value_t = 40)]
    pub steps: usize,
    #[arg(long, default_value_t = hornn_core::INIT_SCALE)]
    pub init_scale: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Serialize)]
struct CurveRow {
    kind: String,
    seed: u64,
    k: usize,
    g_k: f64,
}

#[derive(Serialize)]
struct KindDecay {
    kind: String,
    median_rate: Option<f64>,
    rates: Vec<Option<f64>>,
    degenerate_seeds: Vec<u64>,
    /// Median rate at most the baseline's.
    no_faster_than_baseline: Option<bool>,
    /// Median rate strictly below the baseline's.
    slower_than_baseline: Option<bool>,
}

#[derive(Serialize)]
struct LagSummary {
    baseline: String,
    seeds: Vec<u64>,
    setup: DecaySetup,
    kinds: Vec<KindDecay>,
}

pub fn lagcurve(args: &LagcurveArgs) -> CliResult<()> {
    let specs = args.kind.iter().map(|k| KindSpec::parse(k)).collect::<CliResult<Vec<_>>>()?;
    if specs.is_empty() {
        return Err(CliError::Config("need at least one kind".into()));
    }
    let setup = DecaySetup {
        steps: args.steps,
        max_lag: args.k,
        init_scale: args.init_scale,
    };
    let configs: Vec<CellConfig> = specs.iter().map(|&s| layer(s, args.dx, args.dh, args.dp)).collect();
    let cmp = decay_compare(&configs, &args.seeds, setup)?;

    let mut rows = Vec::new();
    for (spec, entry) in specs.iter().zip(&cmp.entries) {
        for curve in &entry.curves {
            for (k, &g_k) in curve.g.iter().enumerate() {
                rows.push(CurveRow {
                    kind: spec.label(),
                    seed: curve.seeds[0],
                    k,
                    g_k,
                });
            }
        }
    }
    let summary = LagSummary {
        baseline: specs[0].label(),
        seeds: cmp.seeds.clone(),
        setup,
        kinds: specs
            .iter()
            .enumerate()
            .map(|(i, spec)| KindDecay {
                kind: spec.label(),
                median_rate: cmp.entries[i].median_rate,
                rates: cmp.entries[i].curves.iter().map(|c| c.decay_rate).collect(),
                degenerate_seeds: cmp.entries[i].degenerate.clone(),
                no_faster_than_baseline: cmp.decays_no_faster(i, 0),
                slower_than_baseline: cmp.decays_slower(i, 0),
            })
            .collect(),
    };
    println!("{}", serde_json::to_string(&summary)?);
    if let Some(path) = out_file(&args.out.out, "lagcurve.csv")? {
        write_csv(&path, &rows)?;
        write_json(&path.with_file_name("lagcurve_summary.json"), &summary)?;
    }
    Ok(())
}
