use clap::Args;
use hornn_core::cost::{display_millions, CostReport};
use hornn_core::CellConfig;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::{out_file, write_csv, write_json, KindSpec};
use crate::OutArgs;

#[derive(Args, Debug)]
pub struct CostArgs {
    /// Cell kinds, comma separated; `kind:activation` overrides the activation.
    #[arg(long, value_delimiter = ',', required = true)]
    pub kind: Vec<String>,
    #[arg(long)]
    pub dx: usize,
    /// Hidden sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dh: Vec<usize>,
    /// Projection sizes for projected kinds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub dp: Vec<usize>,
    /// High-order lag.
    #[arg(long)]
    pub n: Option<usize>,
    /// Shortcut lag.
    #[arg(long)]
    pub m: Option<usize>,
    /// Identical stacked layers; each takes the previous layer's output.
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    /// Print a CSV table (and write cost.csv) instead of JSON.
    #[arg(long)]
    pub csv: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Clone, Debug, Serialize)]
struct CostRecord {
    kind: String,
    d_x: usize,
    d_h: usize,
    d_p: usize,
    n: usize,
    m: usize,
    layers: usize,
    params: u64,
    madds: u64,
    scale_params: u64,
    params_display: String,
    /// Unprojected twin's parameters over these; set by `flops` for
    /// projected kinds.
    reduction_ratio_vs_unprojected: Option<f64>,
}

fn stack(spec: KindSpec, args: &CostArgs, d_h: usize, d_p: usize) -> Vec<CellConfig> {
    let mut configs = Vec::with_capacity(args.layers);
    let mut d_x = args.dx;
    for _ in 0..args.layers {
        let mut c = CellConfig::new(spec.kind, d_x, d_h);
        c.d_p = d_p;
        c.n = args.n.unwrap_or(c.n);
        c.m = args.m.unwrap_or(c.m);
        c.activation = spec.activation.unwrap_or(c.activation);
        d_x = c.output_dim();
        configs.push(c);
    }
    configs
}

fn records(args: &CostArgs, flops: bool) -> CliResult<Vec<CostRecord>> {
    if args.layers == 0 {
        return Err(CliError::Config("--layers must be at least 1".into()));
    }
    let specs = args.kind.iter().map(|k| KindSpec::parse(k)).collect::<CliResult<Vec<_>>>()?;
    let mut out = Vec::new();
    for spec in specs {
        let dps: Vec<usize> = if !spec.kind.is_projected() {
            vec![0]
        } else if args.dp.is_empty() {
            return Err(CliError::Config(format!("{} needs --dp", spec.kind)));
        } else {
            args.dp.clone()
        };
        for &d_h in &args.dh {
            for &d_p in &dps {
                let configs = stack(spec, args, d_h, d_p);
                let report = CostReport::for_stack(&configs)?;
                let top = configs[0];
                let ratio = if flops && spec.kind.is_projected() {
                    report.layers[0].reduction_ratio_vs_unprojected
                } else {
                    None
                };
                out.push(CostRecord {
                    kind: spec.label(),
                    d_x: args.dx,
                    d_h,
                    d_p,
                    n: top.n,
                    m: top.m,
                    layers: args.layers,
                    params: report.params_recurrent,
                    madds: report.madds_per_frame,
                    scale_params: report.scale_params,
                    params_display: display_millions(report.params_recurrent),
                    reduction_ratio_vs_unprojected: ratio,
                });
            }
        }
    }
    Ok(out)
}

pub fn run(args: &CostArgs, flops: bool) -> CliResult<()> {
    // Everything is validated before any file is created.
    let recs = records(args, flops)?;
    if args.csv {
        let mut w = csv::Writer::from_writer(std::io::stdout());
        for r in &recs {
            w.serialize(r)?;
        }
        w.flush()?;
        if let Some(path) = out_file(&args.out.out, "cost.csv")? {
            write_csv(&path, &recs)?;
        }
    } else if recs.len() == 1 {
        println!("{}", serde_json::to_string(&recs[0])?);
    } else {
        println!("{}", serde_json::to_string(&recs)?);
    }
    if let Some(path) = out_file(&args.out.out, "cost.json")? {
        if recs.len() == 1 {
            write_json(&path, &recs[0])?;
        } else {
            write_json(&path, &recs)?;
        }
    }
    Ok(())
}
